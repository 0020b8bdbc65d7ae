#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "fixquant/tensor.hpp"

namespace fixquant {

/// Error raised for contract violations anywhere in the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Rounding methods for mapping reals onto the fixed-point grid.
enum class RoundingMode {
    Nearest,     // sgn(x) * floor(|x|/delta + 0.5) * delta, ties away from zero
    TowardZero,  // sgn(x) * floor(|x|/delta) * delta
    Down,        // floor(x/delta) * delta, sign-agnostic truncation of the bit pattern
    Stochastic,  // up with probability equal to the position within the cell
};

RoundingMode parse_rounding_mode(const std::string& name);
std::string rounding_mode_name(RoundingMode mode);

/// Signed fixed-point format: W total bits (two's complement), F fractional bits.
struct FixedPointFormat {
    int word_size = 8;
    int frac_bits = 0;

    FixedPointFormat() = default;
    FixedPointFormat(int w, int f) : word_size(w), frac_bits(f) { validate(); }

    void validate() const {
        if (word_size < 2 || word_size > 64)
            throw Error("fixed-point word size must be in [2,64], got " +
                        std::to_string(word_size));
        if (frac_bits < 0 || frac_bits > word_size - 1)
            throw Error("fixed-point frac bits must be in [0,W-1], got " +
                        std::to_string(frac_bits) + " for W=" + std::to_string(word_size));
    }

    double resolution() const { return std::ldexp(1.0, -frac_bits); }
    double min_value() const { return -std::ldexp(1.0, word_size - frac_bits - 1); }
    double max_value() const {
        return std::ldexp(1.0, word_size - frac_bits - 1) - resolution();
    }

    bool operator==(const FixedPointFormat&) const = default;
};

/// Seeded uniform [0,1) stream. Single-owner: never share one instance across
/// threads; derive per-partition children with derive() instead.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : gen_(seed) {}

    double next_uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Child stream for partition `index`; distinct indices give independent
    /// streams under the same parent seed (splitmix64 mixing).
    RandomSource derive(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_value_; }

private:
    RandomSource(std::uint64_t seed, int) : gen_(seed), seed_value_(seed) {}
    std::mt19937_64 gen_;
    std::uint64_t seed_value_ = 0;

    friend RandomSource make_random_source(std::uint64_t);
};

RandomSource make_random_source(std::uint64_t seed);

/// Round one value onto the grid of `fmt`, then saturate to its range.
/// `rng` is required exactly when mode == Stochastic.
double round_value(double x, const FixedPointFormat& fmt, RoundingMode mode,
                   RandomSource* rng = nullptr);

/// Elementwise round_value in row-major order (stochastic draws are consumed
/// in that order, one per element).
Tensor round_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingMode mode,
                    RandomSource* rng = nullptr);

/// Exact bridge between representable reals and the underlying integers.
std::int64_t to_fixed_integer(double x, const FixedPointFormat& fmt);
double from_fixed_integer(std::int64_t i, const FixedPointFormat& fmt);

}  // namespace fixquant

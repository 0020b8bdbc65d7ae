#include "fixquant/fixedpoint.hpp"

#include <cmath>

namespace fixquant {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

RandomSource make_random_source(std::uint64_t seed) { return RandomSource(seed, 0); }

RandomSource RandomSource::derive(std::uint64_t index) const {
    return make_random_source(splitmix64(seed_value_ ^ splitmix64(index + 1)));
}

RoundingMode parse_rounding_mode(const std::string& name) {
    if (name == "nearest") return RoundingMode::Nearest;
    if (name == "zero") return RoundingMode::TowardZero;
    if (name == "down") return RoundingMode::Down;
    if (name == "stochastic") return RoundingMode::Stochastic;
    throw Error("unknown rounding mode '" + name +
                "' (expected nearest|zero|down|stochastic)");
}

std::string rounding_mode_name(RoundingMode mode) {
    switch (mode) {
        case RoundingMode::Nearest: return "nearest";
        case RoundingMode::TowardZero: return "zero";
        case RoundingMode::Down: return "down";
        case RoundingMode::Stochastic: return "stochastic";
    }
    return "?";
}

double round_value(double x, const FixedPointFormat& fmt, RoundingMode mode,
                   RandomSource* rng) {
    fmt.validate();
    if (!std::isfinite(x)) throw Error("non-finite input to round_value");
    if (mode == RoundingMode::Stochastic && rng == nullptr)
        throw Error("stochastic rounding requires a random source");
    if (mode != RoundingMode::Stochastic && rng != nullptr)
        rng = nullptr;

    // Work in grid units: y = x / delta. Scaling by a power of two is exact,
    // and y - floor(y) is exact for |y| < 2^53, so the kernels below agree
    // bit-for-bit with exact rational arithmetic on that domain.
    const double y = std::ldexp(x, fmt.frac_bits);
    double n;  // grid index, integral-valued
    if (!std::isfinite(y) || std::fabs(y) >= 0x1.0p63) {
        // outside every representable range; saturation decides the result
        n = (x < 0) ? -0x1.0p63 : 0x1.0p63;
        if (mode == RoundingMode::Stochastic) rng->next_uniform();  // keep draw count
    } else {
        switch (mode) {
            case RoundingMode::Nearest: {
                const double a = std::fabs(y);
                const double q = std::floor(a);
                n = (a - q >= 0.5) ? q + 1.0 : q;
                if (y < 0) n = -n;
                break;
            }
            case RoundingMode::TowardZero: {
                n = std::trunc(y);
                break;
            }
            case RoundingMode::Down: {
                n = std::floor(y);
                break;
            }
            case RoundingMode::Stochastic: {
                // The up-probability is the position of x within its
                // quantization cell: p = (x - floor(x/delta)*delta) / delta,
                // i.e. the fractional part of y; rounds up iff p >= t.
                const double q = std::floor(y);
                const double p = y - q;
                const double t = rng->next_uniform();
                n = (p >= t) ? q + 1.0 : q;
                break;
            }
        }
    }
    double r = std::ldexp(n, -fmt.frac_bits);
    if (r < fmt.min_value()) r = fmt.min_value();
    if (r > fmt.max_value()) r = fmt.max_value();
    return r;
}

Tensor round_tensor(const Tensor& t, const FixedPointFormat& fmt, RoundingMode mode,
                    RandomSource* rng) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        try {
            out[i] = round_value(t[i], fmt, mode, rng);
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " (element " + std::to_string(i) + ")");
        }
    }
    return out;
}

std::int64_t to_fixed_integer(double x, const FixedPointFormat& fmt) {
    fmt.validate();
    if (!std::isfinite(x)) throw Error("non-finite input to to_fixed_integer");
    const double y = std::ldexp(x, fmt.frac_bits);
    if (std::floor(y) != y)
        throw Error("value " + std::to_string(x) + " is not representable in fixed(" +
                    std::to_string(fmt.word_size) + "," + std::to_string(fmt.frac_bits) + ")");
    const double lo = -std::ldexp(1.0, fmt.word_size - 1);
    const double hi = std::ldexp(1.0, fmt.word_size - 1);
    if (y < lo || y >= hi)
        throw Error("value " + std::to_string(x) + " outside fixed(" +
                    std::to_string(fmt.word_size) + "," + std::to_string(fmt.frac_bits) +
                    ") range");
    return static_cast<std::int64_t>(y);
}

double from_fixed_integer(std::int64_t i, const FixedPointFormat& fmt) {
    fmt.validate();
    if (fmt.word_size < 64) {
        const std::int64_t hi = std::int64_t{1} << (fmt.word_size - 1);
        if (i < -hi || i >= hi)
            throw Error("integer " + std::to_string(i) + " outside signed " +
                        std::to_string(fmt.word_size) + "-bit range");
    }
    return std::ldexp(static_cast<double>(i), -fmt.frac_bits);
}

}  // namespace fixquant

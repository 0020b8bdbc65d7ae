#pragma once

#include <memory>
#include <optional>
#include <string>

#include "fixquant/fixedpoint.hpp"
#include "fixquant/tensor.hpp"

namespace fixquant {

/// Behavioral interface every quantization method implements: a tensor goes
/// in, the quantized tensor of the same shape comes out. Implementations that
/// are elementwise additionally derive from ElementwiseQuantizer so that the
/// per-operation (intrinsic) arithmetic path can apply them to scalars.
class Quantizer {
public:
    virtual ~Quantizer() = default;

    virtual Tensor quantize(const Tensor& t) = 0;

    /// Parseable description, e.g. "fixed(8,4,nearest)"; round-trips through
    /// parse_quantizer.
    virtual std::string descriptor() const = 0;

    /// Independent copy; stochastic quantizers get a derived sub-seed so the
    /// clone's stream does not alias the original.
    virtual std::shared_ptr<Quantizer> clone(std::uint64_t sub_seed) const = 0;
};

/// Quantizers defined value-by-value. quantize() is the row-major elementwise
/// lift of quantize_value().
class ElementwiseQuantizer : public Quantizer {
public:
    virtual double quantize_value(double x) = 0;

    Tensor quantize(const Tensor& t) override {
        Tensor out(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = quantize_value(t[i]);
        return out;
    }
};

class IdentityQuantizer final : public ElementwiseQuantizer {
public:
    double quantize_value(double x) override { return x; }
    Tensor quantize(const Tensor& t) override { return t; }
    std::string descriptor() const override { return "identity"; }
    std::shared_ptr<Quantizer> clone(std::uint64_t) const override {
        return std::make_shared<IdentityQuantizer>();
    }
};

class FixedPointQuantizer final : public ElementwiseQuantizer {
public:
    FixedPointQuantizer(FixedPointFormat fmt, RoundingMode mode,
                        std::optional<std::uint64_t> seed = std::nullopt);

    double quantize_value(double x) override;
    std::string descriptor() const override;
    std::shared_ptr<Quantizer> clone(std::uint64_t sub_seed) const override;

    const FixedPointFormat& format() const { return fmt_; }
    RoundingMode mode() const { return mode_; }
    std::optional<std::uint64_t> seed() const { return seed_; }

private:
    FixedPointFormat fmt_;
    RoundingMode mode_;
    std::optional<std::uint64_t> seed_;
    std::optional<RandomSource> rng_;
};

using QuantizerPtr = std::shared_ptr<Quantizer>;

/// Grammar: "identity" | "fixed(W,F,mode[,seed=N])" with
/// mode in {nearest, zero, down, stochastic}; stochastic requires a seed.
QuantizerPtr parse_quantizer(const std::string& spec);

}  // namespace fixquant

#include "fixquant/quantizer.hpp"

#include <cctype>
#include <charconv>
#include <vector>

namespace fixquant {

FixedPointQuantizer::FixedPointQuantizer(FixedPointFormat fmt, RoundingMode mode,
                                         std::optional<std::uint64_t> seed)
    : fmt_(fmt), mode_(mode), seed_(seed) {
    fmt_.validate();
    if (mode_ == RoundingMode::Stochastic) {
        if (!seed_) throw Error("stochastic fixed-point quantizer requires a seed");
        rng_ = make_random_source(*seed_);
    } else if (seed_) {
        throw Error("seed given for deterministic rounding mode '" +
                    rounding_mode_name(mode_) + "'");
    }
}

double FixedPointQuantizer::quantize_value(double x) {
    return round_value(x, fmt_, mode_, rng_ ? &*rng_ : nullptr);
}

std::string FixedPointQuantizer::descriptor() const {
    std::string s = "fixed(" + std::to_string(fmt_.word_size) + "," +
                    std::to_string(fmt_.frac_bits) + "," + rounding_mode_name(mode_);
    if (seed_) s += ",seed=" + std::to_string(*seed_);
    return s + ")";
}

std::shared_ptr<Quantizer> FixedPointQuantizer::clone(std::uint64_t sub_seed) const {
    std::optional<std::uint64_t> seed = seed_;
    if (seed) seed = make_random_source(*seed).derive(sub_seed).seed();
    return std::make_shared<FixedPointQuantizer>(fmt_, mode_, seed);
}

namespace {

long parse_int_token(const std::string& tok, const std::string& what) {
    long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw Error("quantizer spec: '" + tok + "' is not a valid " + what);
    return v;
}

}  // namespace

QuantizerPtr parse_quantizer(const std::string& raw) {
    std::string spec;
    for (char c : raw)
        if (!std::isspace(static_cast<unsigned char>(c))) spec += c;

    if (spec == "identity") return std::make_shared<IdentityQuantizer>();

    if (spec.rfind("fixed(", 0) == 0 && spec.back() == ')') {
        const std::string inner = spec.substr(6, spec.size() - 7);
        std::vector<std::string> parts;
        std::size_t start = 0;
        while (true) {
            auto comma = inner.find(',', start);
            parts.push_back(inner.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (parts.size() < 3 || parts.size() > 4)
            throw Error("quantizer spec '" + raw + "': expected fixed(W,F,mode[,seed=N])");
        const long w = parse_int_token(parts[0], "word size");
        const long f = parse_int_token(parts[1], "fractional bit count");
        const RoundingMode mode = parse_rounding_mode(parts[2]);
        std::optional<std::uint64_t> seed;
        if (parts.size() == 4) {
            if (parts[3].rfind("seed=", 0) != 0)
                throw Error("quantizer spec '" + raw + "': expected seed=N, got '" +
                            parts[3] + "'");
            seed = static_cast<std::uint64_t>(
                parse_int_token(parts[3].substr(5), "seed"));
        }
        FixedPointFormat fmt(static_cast<int>(w), static_cast<int>(f));
        return std::make_shared<FixedPointQuantizer>(fmt, mode, seed);
    }

    throw Error("quantizer spec '" + raw + "': expected 'identity' or 'fixed(...)'");
}

}  // namespace fixquant

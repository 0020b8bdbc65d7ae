#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "fixquant/layers.hpp"
#include "oracle/integer_oracle.hpp"

using namespace fixquant;
using fixquant::testing::IntOracleQuantizer;

namespace {

std::vector<std::string> g_warnings;

void capture_warning(const std::string& m) { g_warnings.push_back(m); }

QuantSlots intrinsic_slot(QuantizerPtr q) {
    QuantSlots s;
    s.intrinsic = std::move(q);
    return s;
}

QuantSlots extrinsic_slot(QuantizerPtr q) {
    QuantSlots s;
    s.extrinsic = std::move(q);
    return s;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& gen,
                     double scale = 2.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& v : t.data()) v = dist(gen);
    return t;
}

}  // namespace

TEST_CASE("padding and granularity parsing") {
    CHECK(parse_padding("same") == Padding::Same);
    CHECK(parse_padding("valid") == Padding::Valid);
    CHECK_THROWS_AS(parse_padding("full"), Error);
    CHECK(parse_granularity("every-op") == IntrinsicGranularity::EveryOp);
    CHECK(parse_granularity("sum-once") == IntrinsicGranularity::SumOnce);
    CHECK_THROWS_AS(parse_granularity("eager"), Error);
    CHECK(granularity_name(IntrinsicGranularity::SumOnce) == "sum-once");
}

TEST_CASE("output dim formulas match brute-force position counting") {
    for (std::size_t in = 1; in <= 8; ++in)
        for (std::size_t window = 1; window <= in; ++window)
            for (std::size_t stride = 1; stride <= 3; ++stride) {
                // valid: count window placements fully inside the input
                std::size_t count = 0;
                for (std::size_t i = 0;; ++i) {
                    if (i * stride + window > in) break;
                    ++count;
                }
                CHECK(conv_output_dim(in, window, stride, Padding::Valid) == count);
                // same: output covers every stride-th position
                CHECK(conv_output_dim(in, window, stride, Padding::Same) ==
                      (in + stride - 1) / stride);
                CHECK(pad_before(in, window, stride, Padding::Valid) == 0);
            }
    CHECK_THROWS_AS(conv_output_dim(2, 3, 1, Padding::Valid), Error);
    CHECK_THROWS_AS(conv_output_dim(4, 2, 0, Padding::Valid), Error);
}

TEST_CASE("conv2d pinned cases") {
    Tensor x({1, 1, 1, 1}, {2.0});
    Conv2dParams p;
    p.filter = Tensor({1, 1, 1, 1}, {3.0});
    CHECK(conv2d_forward(x, p, {})[0] == 6.0);
    CHECK(conv2d_forward(
              x, p, intrinsic_slot(parse_quantizer("fixed(8,2,nearest)")))[0] == 6.0);

    Tensor x2({1, 1, 1, 2}, {0.3, 0.3});
    Conv2dParams p2;
    p2.filter = Tensor({1, 1, 2, 1}, {1.0, 1.0});
    CHECK(conv2d_forward(x2, p2,
                         intrinsic_slot(parse_quantizer("fixed(8,2,down)")))[0] == 0.5);
    CHECK(conv2d_forward(x2, p2,
                         extrinsic_slot(parse_quantizer("fixed(8,2,down)")))[0] == 0.5);
}

TEST_CASE("conv2d shape and finiteness errors") {
    Conv2dParams p;
    p.filter = Tensor({1, 1, 2, 1}, {1.0, 1.0});
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 1, 3}), p, {}), Error);  // channels
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 2}), p, {}), Error);       // rank
    Tensor bad({1, 1, 1, 2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(conv2d_forward(bad, p, {}), Error);
    p.bias = Tensor({3});
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 1, 2}), p, {}), Error);  // bias shape
}

TEST_CASE("fully_connected pinned intrinsic vs extrinsic witness") {
    Tensor x({1, 1}, {0.3});
    DenseParams p;
    p.weight = Tensor({1, 1}, {0.3});
    const double intr = fully_connected_forward(
        x, p, intrinsic_slot(parse_quantizer("fixed(8,4,nearest)")))[0];
    const double extr = fully_connected_forward(
        x, p, extrinsic_slot(parse_quantizer("fixed(8,4,nearest)")))[0];
    CHECK(intr == 0.125);
    CHECK(extr == 0.0625);
    CHECK(intr != extr);

    Tensor x2({1, 2}, {1.0, 0.0});
    DenseParams p2;
    p2.weight = Tensor({2, 2}, {1, 0, 0, 1});
    Tensor r = fully_connected_forward(x2, p2, {});
    CHECK(r.at2(0, 0) == 1.0);
    CHECK(r.at2(0, 1) == 0.0);
}

TEST_CASE("maxpool pinned cases") {
    Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
    MaxPool2dParams p;
    CHECK(maxpool2d_forward(x, p, {})[0] == 4.0);

    Tensor y({1, 2, 2, 1}, {1.5, 2.5, 3.5, 4.5});
    CHECK(maxpool2d_forward(y, p,
                            intrinsic_slot(parse_quantizer("fixed(4,0,down)")))[0] == 4.0);
}

TEST_CASE("relu, softmax and batchnorm pinned cases") {
    Tensor x({1, 2}, {-1.0, 0.5});
    Tensor r = relu_forward(x, {});
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.5);

    Tensor s = softmax_forward(Tensor({1, 2}), {});
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);

    BatchNormParams bn;
    bn.gamma = Tensor({1}, {1.0});
    bn.beta = Tensor({1});
    bn.moving_mean = Tensor({1});
    bn.moving_variance = Tensor({1}, {1.0});
    bn.epsilon = 0.0;
    Tensor in({1, 1, 1, 1}, {0.7});
    CHECK(batchnorm_forward(in, bn, {})[0] == 0.7);

    bn.moving_variance[0] = -1.0;
    CHECK_THROWS_AS(batchnorm_forward(in, bn, {}), Error);
}

TEST_CASE("softmax and batchnorm ignore intrinsic slots with a warning") {
    set_warning_handler(capture_warning);
    g_warnings.clear();
    auto slots = intrinsic_slot(parse_quantizer("fixed(8,4,nearest)"));
    softmax_forward(Tensor({1, 3}, {1, 2, 3}), slots);
    BatchNormParams bn;
    bn.gamma = Tensor({1}, {1.0});
    bn.beta = Tensor({1});
    bn.moving_mean = Tensor({1});
    bn.moving_variance = Tensor({1}, {1.0});
    batchnorm_forward(Tensor({1, 1, 1, 1}, {0.5}), bn, slots);
    CHECK(g_warnings.size() == 2);
    set_warning_handler(nullptr);
}

TEST_CASE("identity slots are transparent on every layer") {
    std::mt19937_64 gen(31);
    QuantSlots both;
    both.intrinsic = std::make_shared<IdentityQuantizer>();
    both.extrinsic = std::make_shared<IdentityQuantizer>();

    Tensor x = random_tensor({1, 5, 5, 3}, gen);
    Conv2dParams conv;
    conv.filter = random_tensor({3, 3, 3, 2}, gen);
    conv.bias = random_tensor({2}, gen);
    for (auto g : {IntrinsicGranularity::EveryOp, IntrinsicGranularity::SumOnce}) {
        const Tensor plain = conv2d_forward(x, conv, {}, g);
        const Tensor ident = conv2d_forward(x, conv, both, g);
        for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == ident[i]);
    }

    Tensor xf = random_tensor({2, 6}, gen);
    DenseParams fc;
    fc.weight = random_tensor({6, 4}, gen);
    fc.bias = random_tensor({4}, gen);
    const Tensor fp = fully_connected_forward(xf, fc, {});
    const Tensor fi = fully_connected_forward(xf, fc, both);
    for (std::size_t i = 0; i < fp.size(); ++i) CHECK(fp[i] == fi[i]);

    MaxPool2dParams mp;
    const Tensor mp_p = maxpool2d_forward(x, mp, {});
    const Tensor mp_i = maxpool2d_forward(x, mp, both);
    for (std::size_t i = 0; i < mp_p.size(); ++i) CHECK(mp_p[i] == mp_i[i]);

    const Tensor r_p = relu_forward(xf, {});
    const Tensor r_i = relu_forward(xf, both);
    for (std::size_t i = 0; i < r_p.size(); ++i) CHECK(r_p[i] == r_i[i]);
}

TEST_CASE("relu commutes with deterministic quantization") {
    std::mt19937_64 gen(37);
    const RoundingMode modes[] = {RoundingMode::Nearest, RoundingMode::TowardZero,
                                  RoundingMode::Down};
    for (int trial = 0; trial < 300; ++trial) {
        const int w = std::uniform_int_distribution<int>(2, 16)(gen);
        const int f = std::uniform_int_distribution<int>(0, w - 1)(gen);
        for (auto mode : modes) {
            FixedPointQuantizer q({w, f}, mode);
            Tensor x = random_tensor({8}, gen, 4.0);
            const Tensor a = q.quantize(relu_forward(x, {}));
            const Tensor b = relu_forward(q.quantize(x), {});
            for (std::size_t i = 0; i < x.size(); ++i) CHECK(a[i] == b[i]);
        }
    }
}

namespace {

struct RandomInstance {
    Tensor x;
    Conv2dParams conv;
    DenseParams fc;
};

void check_conv_against_oracle(std::mt19937_64& gen, RoundingMode mode,
                               IntrinsicGranularity g) {
    const int w = std::uniform_int_distribution<int>(2, 16)(gen);
    const int f = std::uniform_int_distribution<int>(0, w - 1)(gen);
    const FixedPointFormat fmt(w, f);

    const std::size_t h = 2 + gen() % 5, wd = 2 + gen() % 5;
    const std::size_t cin = 1 + gen() % 4, cout = 1 + gen() % 4;
    const std::size_t kh = 1 + gen() % std::min<std::size_t>(3, h);
    const std::size_t kw = 1 + gen() % std::min<std::size_t>(3, wd);
    const std::size_t stride = 1 + gen() % 2;
    const Padding padding = (gen() % 2) ? Padding::Same : Padding::Valid;
    const bool bias = gen() % 2;

    Tensor x = random_tensor({1 + gen() % 2, h, wd, cin}, gen);
    Conv2dParams p;
    p.filter = random_tensor({kh, kw, cin, cout}, gen);
    if (bias) p.bias = random_tensor({cout}, gen);
    p.stride = stride;
    p.padding = padding;

    std::optional<std::uint64_t> seed;
    if (mode == RoundingMode::Stochastic) seed = gen();
    auto q = std::make_shared<FixedPointQuantizer>(fmt, mode, seed);
    const Tensor got = conv2d_forward(x, p, intrinsic_slot(q), g);

    std::optional<RandomSource> rng;
    if (seed) rng = make_random_source(*seed);
    IntOracleQuantizer oq(fmt, mode, rng ? &*rng : nullptr);
    const Tensor want = fixquant::testing::oracle_conv2d(x, p, oq, g);

    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE_MESSAGE(got[i] == want[i], "conv W=", w, " F=", f, " mode=",
                        rounding_mode_name(mode), " g=", granularity_name(g));
}

void check_fc_against_oracle(std::mt19937_64& gen, RoundingMode mode,
                             IntrinsicGranularity g) {
    const int w = std::uniform_int_distribution<int>(2, 16)(gen);
    const int f = std::uniform_int_distribution<int>(0, w - 1)(gen);
    const FixedPointFormat fmt(w, f);

    Tensor x = random_tensor({1 + gen() % 3, 1 + gen() % 8}, gen);
    DenseParams p;
    p.weight = random_tensor({x.dim(1), 1 + gen() % 6}, gen);
    if (gen() % 2) p.bias = random_tensor({p.weight.dim(1)}, gen);

    std::optional<std::uint64_t> seed;
    if (mode == RoundingMode::Stochastic) seed = gen();
    auto q = std::make_shared<FixedPointQuantizer>(fmt, mode, seed);
    const Tensor got = fully_connected_forward(x, p, intrinsic_slot(q), g);

    std::optional<RandomSource> rng;
    if (seed) rng = make_random_source(*seed);
    IntOracleQuantizer oq(fmt, mode, rng ? &*rng : nullptr);
    const Tensor want = fixquant::testing::oracle_fully_connected(x, p, oq, g);

    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE_MESSAGE(got[i] == want[i], "fc W=", w, " F=", f, " mode=",
                        rounding_mode_name(mode), " g=", granularity_name(g));
}

}  // namespace

TEST_CASE("intrinsic kernels match the scaled-integer oracle") {
    std::mt19937_64 gen(4242);
    const RoundingMode modes[] = {RoundingMode::Nearest, RoundingMode::TowardZero,
                                  RoundingMode::Down, RoundingMode::Stochastic};
    for (auto mode : modes)
        for (auto g : {IntrinsicGranularity::EveryOp, IntrinsicGranularity::SumOnce})
            for (int trial = 0; trial < 60; ++trial) {
                check_conv_against_oracle(gen, mode, g);
                check_fc_against_oracle(gen, mode, g);
            }
}

TEST_CASE("intrinsic requires an elementwise quantizer message") {
    // all shipped quantizers are elementwise; the guard still names the layer
    Tensor x({1, 1, 1, 1}, {1.0});
    Conv2dParams p;
    p.filter = Tensor({1, 1, 1, 1}, {1.0});
    QuantSlots slots = intrinsic_slot(parse_quantizer("fixed(8,4,nearest)"));
    CHECK_NOTHROW(conv2d_forward(x, p, slots));
}

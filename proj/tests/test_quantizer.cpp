#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fixquant/quantizer.hpp"

using namespace fixquant;

TEST_CASE("fixed-point quantizer pinned cases") {
    FixedPointQuantizer q8_4({8, 4}, RoundingMode::Nearest);
    Tensor r = q8_4.quantize(Tensor({1}, {0.33}));
    CHECK(r[0] == 0.3125);

    FixedPointQuantizer q4_2({4, 2}, RoundingMode::Down);
    CHECK(q4_2.quantize(Tensor({1}, {-2.5}))[0] == -2.0);
}

TEST_CASE("identity quantizer is transparent") {
    IdentityQuantizer id;
    Tensor t({2, 2}, {0.1, -2.3, 5.0, 0.0});
    Tensor r = id.quantize(t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(r[i] == t[i]);
    CHECK(id.descriptor() == "identity");
}

TEST_CASE("quantize preserves shape") {
    FixedPointQuantizer q({6, 3}, RoundingMode::TowardZero);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(q.quantize(t).shape() == t.shape());
}

TEST_CASE("stochastic quantizer seeding rules") {
    CHECK_THROWS_AS(FixedPointQuantizer({8, 4}, RoundingMode::Stochastic), Error);
    CHECK_THROWS_AS(FixedPointQuantizer({8, 4}, RoundingMode::Nearest, 7), Error);
    FixedPointQuantizer a({8, 4}, RoundingMode::Stochastic, 7);
    FixedPointQuantizer b({8, 4}, RoundingMode::Stochastic, 7);
    Tensor t({5}, {0.11, 0.22, 0.33, 0.44, 0.55});
    Tensor ra = a.quantize(t), rb = b.quantize(t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(ra[i] == rb[i]);
}

TEST_CASE("clone derives an independent stochastic stream") {
    FixedPointQuantizer q({8, 4}, RoundingMode::Stochastic, 7);
    auto c1 = q.clone(1);
    auto c2 = q.clone(1);
    auto c3 = q.clone(2);
    Tensor t({8}, {0.11, 0.22, 0.33, 0.44, 0.55, 0.66, 0.77, 0.88});
    Tensor r1 = c1->quantize(t), r2 = c2->quantize(t), r3 = c3->quantize(t);
    bool same_12 = true, same_13 = true;
    for (std::size_t i = 0; i < t.size(); ++i) {
        same_12 = same_12 && r1[i] == r2[i];
        same_13 = same_13 && r1[i] == r3[i];
    }
    CHECK(same_12);
    CHECK_FALSE(same_13);  // different sub-seed, different draws (w.h.p.)
}

TEST_CASE("parse_quantizer grammar") {
    auto q = parse_quantizer("fixed(16,8,nearest)");
    auto* fq = dynamic_cast<FixedPointQuantizer*>(q.get());
    REQUIRE(fq != nullptr);
    CHECK(fq->format() == FixedPointFormat(16, 8));
    CHECK(fq->mode() == RoundingMode::Nearest);

    CHECK(dynamic_cast<IdentityQuantizer*>(parse_quantizer("identity").get()));
    CHECK(parse_quantizer(" fixed( 8 , 4 , down ) ")->descriptor() == "fixed(8,4,down)");

    auto s = parse_quantizer("fixed(8,4,stochastic,seed=11)");
    CHECK(s->descriptor() == "fixed(8,4,stochastic,seed=11)");

    CHECK_THROWS_AS(parse_quantizer("fixed(4,7,down)"), Error);  // F >= W
    CHECK_THROWS_AS(parse_quantizer("fixed(8,4)"), Error);
    CHECK_THROWS_AS(parse_quantizer("fixed(8,4,banker)"), Error);
    CHECK_THROWS_AS(parse_quantizer("fixed(8,4,stochastic)"), Error);  // no seed
    CHECK_THROWS_AS(parse_quantizer("fixed(8,4,down,seed=1)"), Error);
    CHECK_THROWS_AS(parse_quantizer("fixed(x,4,down)"), Error);
    CHECK_THROWS_AS(parse_quantizer("gaussian"), Error);
}

TEST_CASE("descriptor round-trips through parse_quantizer") {
    const char* specs[] = {"identity", "fixed(8,4,nearest)", "fixed(4,2,down)",
                           "fixed(16,0,zero)", "fixed(12,6,stochastic,seed=3)"};
    for (const char* s : specs) {
        auto q = parse_quantizer(s);
        CHECK(q->descriptor() == s);
        CHECK(parse_quantizer(q->descriptor())->descriptor() == q->descriptor());
    }
}

TEST_CASE("deterministic quantization is idempotent") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> dist(-20.0, 20.0);
    for (auto mode : {RoundingMode::Nearest, RoundingMode::TowardZero, RoundingMode::Down}) {
        FixedPointQuantizer q({10, 4}, mode);
        Tensor t({64});
        for (auto& v : t.data()) v = dist(gen);
        Tensor once = q.quantize(t);
        Tensor twice = q.quantize(once);
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(twice[i] == once[i]);
    }
}

TEST_CASE("already-representable tensors pass through unchanged") {
    FixedPointQuantizer q({8, 3}, RoundingMode::Nearest);
    Tensor t({4}, {0.125, -1.5, 3.0, 0.0});
    Tensor r = q.quantize(t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(r[i] == t[i]);
}

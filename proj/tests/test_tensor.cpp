#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fixquant/fixedpoint.hpp"
#include "fixquant/tensor.hpp"

using namespace fixquant;

TEST_CASE("construction and shape checks") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.shape_string() == "[2,3]");
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);

    CHECK_THROWS_AS(Tensor({2, 0}), Error);
    CHECK_THROWS_AS(Tensor({2, 2, 2, 2, 2}), Error);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("reshape preserves data") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at2(2, 1) == 6.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
}

TEST_CASE("elementwise ops") {
    Tensor a({2}, {-1.0, 2.0});
    Tensor zero({2});
    Tensor r = elementwise(ElementwiseOp::Max, a, zero);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    CHECK(elementwise(ElementwiseOp::Add, a, a)[1] == 4.0);
    CHECK(elementwise(ElementwiseOp::Sub, a, a)[0] == 0.0);
    CHECK(elementwise(ElementwiseOp::Mul, a, a)[0] == 1.0);
    CHECK_THROWS_AS(elementwise(ElementwiseOp::Add, a, Tensor({3})), Error);
}

TEST_CASE("map applies elementwise") {
    Tensor t({3}, {1, 2, 3});
    Tensor r = map([](double v) { return v * v; }, t);
    CHECK(r[2] == 9.0);
}

TEST_CASE("matmul identity and mismatch") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor id({2, 2}, {1, 0, 0, 1});
    Tensor r = matmul(a, id);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == a[i]);
    CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), Error);
}

TEST_CASE("matmul agrees with naive triple-loop oracle bit-exactly") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + gen() % 5, k = 1 + gen() % 5, n = 1 + gen() % 5;
        Tensor a({m, k}), b({k, n});
        for (auto& v : a.data()) v = dist(gen);
        for (auto& v : b.data()) v = dist(gen);
        const Tensor got = matmul(a, b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a.at2(i, p) * b.at2(p, j);
                CHECK(got.at2(i, j) == acc);
            }
    }
}

TEST_CASE("reduce semantics") {
    Tensor t({3}, {1, 2, 3});
    CHECK(reduce(ReduceOp::Sum, t, 0)[0] == 6.0);
    CHECK(reduce(ReduceOp::Max, t, 0)[0] == 3.0);

    Tensor m({2, 3}, {1, 5, 5, 4, 2, 0});
    Tensor am = reduce(ReduceOp::Argmax, m, 1);
    CHECK(am[0] == 1.0);  // tie between columns 1 and 2 resolves to the lower
    CHECK(am[1] == 0.0);

    Tensor colsum = reduce(ReduceOp::Sum, m, 0);
    CHECK(colsum[0] == 5.0);
    CHECK(colsum[1] == 7.0);
    CHECK(colsum[2] == 5.0);

    CHECK_THROWS_AS(reduce(ReduceOp::Sum, t, 1), Error);
}

TEST_CASE("repeated evaluation is bit-identical") {
    std::mt19937_64 gen(23);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor a({4, 4}), b({4, 4});
    for (auto& v : a.data()) v = dist(gen);
    for (auto& v : b.data()) v = dist(gen);
    const Tensor r1 = matmul(a, b), r2 = matmul(a, b);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("all_finite flags bad values") {
    Tensor t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}

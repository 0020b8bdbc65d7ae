#include <random>

#include <benchmark/benchmark.h>

#include "fixquant/layers.hpp"
#include "fixquant/quantizer.hpp"

using namespace fixquant;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : t.data()) v = dist(gen);
    return t;
}

struct ConvFixture {
    Tensor x = random_tensor({1, 28, 28, 1}, 1);
    Conv2dParams p;
    ConvFixture() {
        p.filter = random_tensor({5, 5, 1, 6}, 2);
        p.bias = random_tensor({6}, 3);
    }
};

QuantSlots slot(QuantizerPtr q, bool intrinsic) {
    QuantSlots s;
    (intrinsic ? s.intrinsic : s.extrinsic) = std::move(q);
    return s;
}

void BM_Conv2dPlain(benchmark::State& state) {
    ConvFixture f;
    for (auto _ : state) {
        Tensor y = conv2d_forward(f.x, f.p, {});
        benchmark::DoNotOptimize(y.data().data());
    }
}

void BM_Conv2dExtrinsic(benchmark::State& state) {
    ConvFixture f;
    const QuantSlots s = slot(parse_quantizer("fixed(8,4,nearest)"), false);
    for (auto _ : state) {
        Tensor y = conv2d_forward(f.x, f.p, s);
        benchmark::DoNotOptimize(y.data().data());
    }
}

void BM_Conv2dIntrinsic(benchmark::State& state) {
    ConvFixture f;
    const auto g = static_cast<IntrinsicGranularity>(state.range(0));
    const QuantSlots s = slot(parse_quantizer("fixed(8,4,nearest)"), true);
    for (auto _ : state) {
        Tensor y = conv2d_forward(f.x, f.p, s, g);
        benchmark::DoNotOptimize(y.data().data());
    }
}

void BM_FullyConnectedIntrinsic(benchmark::State& state) {
    Tensor x = random_tensor({8, 256}, 4);
    DenseParams p;
    p.weight = random_tensor({256, 120}, 5);
    p.bias = random_tensor({120}, 6);
    const QuantSlots s = slot(parse_quantizer("fixed(8,4,nearest)"), true);
    for (auto _ : state) {
        Tensor y = fully_connected_forward(x, p, s);
        benchmark::DoNotOptimize(y.data().data());
    }
}

}  // namespace

BENCHMARK(BM_Conv2dPlain);
BENCHMARK(BM_Conv2dExtrinsic);
BENCHMARK(BM_Conv2dIntrinsic)
    ->Arg(static_cast<int>(IntrinsicGranularity::EveryOp))
    ->Arg(static_cast<int>(IntrinsicGranularity::SumOnce));
BENCHMARK(BM_FullyConnectedIntrinsic);

BENCHMARK_MAIN();

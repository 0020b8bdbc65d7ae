#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fixquant/fixedpoint.hpp"

using namespace fixquant;

namespace {

std::vector<double> make_inputs(std::size_t n) {
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> dist(-100.0, 100.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

void BM_RoundDeterministic(benchmark::State& state) {
    const auto mode = static_cast<RoundingMode>(state.range(0));
    const FixedPointFormat fmt(16, 8);
    const auto inputs = make_inputs(4096);
    for (auto _ : state) {
        double acc = 0.0;
        for (double x : inputs) acc += round_value(x, fmt, mode);
        benchmark::DoNotOptimize(acc);
    }
    state.SetItemsProcessed(state.iterations() * inputs.size());
}

void BM_RoundStochastic(benchmark::State& state) {
    const FixedPointFormat fmt(16, 8);
    const auto inputs = make_inputs(4096);
    auto rng = make_random_source(3);
    for (auto _ : state) {
        double acc = 0.0;
        for (double x : inputs)
            acc += round_value(x, fmt, RoundingMode::Stochastic, &rng);
        benchmark::DoNotOptimize(acc);
    }
    state.SetItemsProcessed(state.iterations() * inputs.size());
}

void BM_RoundTensor(benchmark::State& state) {
    const FixedPointFormat fmt(8, 4);
    Tensor t({64, 64});
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> dist(-8.0, 8.0);
    for (auto& v : t.data()) v = dist(gen);
    for (auto _ : state) {
        Tensor r = round_tensor(t, fmt, RoundingMode::Nearest);
        benchmark::DoNotOptimize(r.data().data());
    }
    state.SetItemsProcessed(state.iterations() * t.size());
}

}  // namespace

BENCHMARK(BM_RoundDeterministic)
    ->Arg(static_cast<int>(RoundingMode::Nearest))
    ->Arg(static_cast<int>(RoundingMode::TowardZero))
    ->Arg(static_cast<int>(RoundingMode::Down));
BENCHMARK(BM_RoundStochastic);
BENCHMARK(BM_RoundTensor);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "resformer/init.hpp"
#include "resformer/ops.hpp"
#include "resformer/tensor.hpp"

using namespace resformer;

namespace {

Tensor gaussian_tensor(Shape shape, uint64_t seed) {
    Rng rng(seed);
    int64_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.gaussian();
    return make_param(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    NoGradGuard guard;
    auto a = gaussian_tensor({n, n}, 1);
    auto b = gaussian_tensor({n, n}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b).values().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_Softmax(benchmark::State& state) {
    const int64_t rows = state.range(0);
    NoGradGuard guard;
    auto x = gaussian_tensor({rows, 128}, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(softmax(x, -1).values().data());
    }
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(1024);

void BM_BackwardChain(benchmark::State& state) {
    const int64_t n = state.range(0);
    auto x = gaussian_tensor({n, n}, 4);
    auto w = gaussian_tensor({n, n}, 5);
    for (auto _ : state) {
        auto loss = mean(mul(tanh(matmul(x, w)), x));
        backward(loss);
        x.zero_grad();
        w.zero_grad();
    }
}
BENCHMARK(BM_BackwardChain)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();

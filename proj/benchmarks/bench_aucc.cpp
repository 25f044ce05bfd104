#include <benchmark/benchmark.h>

#include "resformer/aucc.hpp"
#include "resformer/init.hpp"

using namespace resformer;

namespace {

ConvergenceCurve synthetic_curve(int64_t n, uint64_t seed) {
    Rng rng(seed);
    ConvergenceCurve c;
    c.run_id = "bench";
    double t = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        t += rng.uniform(0.01, 1.0);
        c.add(t, rng.uniform(0.0, 100.0));
    }
    return c;
}

void BM_ComputeAucc(benchmark::State& state) {
    const auto curve = synthetic_curve(state.range(0), 1);
    const double t_hat = curve.samples.back().wall_clock_s * 0.8;
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_aucc(curve, t_hat));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ComputeAucc)->Arg(100)->Arg(10000);

void BM_AggregateSeeds(benchmark::State& state) {
    std::vector<ConvergenceCurve> curves;
    for (uint64_t s = 0; s < 8; ++s) curves.push_back(synthetic_curve(state.range(0), s));
    const double t_hat = curves.front().samples.back().wall_clock_s * 0.8;
    for (auto _ : state) {
        benchmark::DoNotOptimize(aggregate_seeds("bench", curves, t_hat));
    }
}
BENCHMARK(BM_AggregateSeeds)->Arg(100)->Arg(2000);

}  // namespace

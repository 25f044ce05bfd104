#include <benchmark/benchmark.h>

#include "resformer/layers.hpp"
#include "resformer/stack.hpp"
#include "resformer/tasks.hpp"
#include "resformer/trainer.hpp"

using namespace resformer;

namespace {

Tensor sequence_input(int64_t b, int64_t t, int64_t d, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(b * t * d));
    for (auto& x : v) x = rng.gaussian();
    return make_param({b, t, d}, std::move(v));
}

void BM_TransformerLayerForward(benchmark::State& state) {
    const int64_t d = state.range(0);
    NoGradGuard guard;
    auto layer = make_transformer_layer(d, 4, 4 * d, 1, false);
    auto x = sequence_input(8, 32, d, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(transformer_layer_forward(x, layer).values().data());
    }
}
BENCHMARK(BM_TransformerLayerForward)->Arg(64)->Arg(128);

void BM_FfnReservoirForward(benchmark::State& state) {
    const int64_t d = state.range(0);
    NoGradGuard guard;
    auto layer = make_ffn_reservoir(d, 4 * d, 1, true);
    auto x = sequence_input(8, 32, d, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ffn_reservoir_forward(x, layer).values().data());
    }
}
BENCHMARK(BM_FfnReservoirForward)->Arg(64)->Arg(128);

ModelSpec bench_spec(const std::string& pattern) {
    ModelSpec spec;
    spec.d_model = 64;
    spec.heads = 4;
    spec.vocab_size = 32;
    spec.encoder = StackPattern::parse(pattern, LayerKind::FfnReservoir);
    spec.decoder = StackPattern::parse("LL", LayerKind::Transformer);
    spec.seed = 3;
    spec.max_len = 40;
    return spec;
}

// Full training step on a copy batch, dense stack vs one with two frozen
// reservoir slots.
void BM_TrainStep(benchmark::State& state) {
    const bool reservoir = state.range(0) != 0;
    auto spec = bench_spec(reservoir ? "LLRLRLLL" : "LLLLLLLL");
    auto m = build_model(spec);

    SyntheticSeq2SeqSpec task;
    task.task = TaskKind::Copy;
    task.vocab_size = 32;
    task.length_min = 5;
    task.length_max = 20;
    task.train_size = 64;
    task.val_size = 4;
    task.test_size = 4;
    task.seed = 8;
    auto data = generate_seq2seq(task);
    auto batch = make_batch(data.train, 0, 32, spec.pad_id(), spec.bos_id(), spec.eos_id());

    OptimizerConfig ocfg;
    ocfg.lr = 1e-4;
    Optimizer opt(ocfg);
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_step(m, batch, opt));
    }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

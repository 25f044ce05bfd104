#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "resformer/errors.hpp"
#include "resformer/ops.hpp"
#include "resformer/tasks.hpp"
#include "resformer/trainer.hpp"

using namespace resformer;

namespace {

ModelSpec tiny_spec(const std::string& enc = "LL", uint64_t seed = 42) {
    ModelSpec spec;
    spec.d_model = 8;
    spec.heads = 2;
    spec.d_ff = 16;
    spec.vocab_size = 5;
    spec.encoder = StackPattern::parse(enc, LayerKind::Transformer);
    spec.decoder = StackPattern::parse("L", LayerKind::Transformer);
    spec.seed = seed;
    spec.max_len = 24;
    return spec;
}

Seq2SeqBatch copy_batch(const ModelSpec& spec, uint64_t seed, int64_t batch_size = 8) {
    SyntheticSeq2SeqSpec task;
    task.task = TaskKind::Copy;
    task.vocab_size = spec.vocab_size;
    task.length_min = 2;
    task.length_max = 5;
    task.train_size = batch_size;
    task.val_size = 1;
    task.test_size = 1;
    task.seed = seed;
    auto data = generate_seq2seq(task);
    return make_batch(data.train, 0, data.train.size(), spec.pad_id(), spec.bos_id(),
                      spec.eos_id());
}

}  // namespace

TEST_CASE("sgd applies the plain update rule") {
    auto p = make_param({2}, {1.0, 2.0});
    auto loss = sum(mul(p, Tensor::from_values({2}, {3.0, -1.0})));
    backward(loss);

    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.lr = 0.1;
    Optimizer opt(cfg);
    opt.step({{"p", p}});

    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 * 3.0).epsilon(1e-12));
    CHECK(p.values()[1] == doctest::Approx(2.0 + 0.1 * 1.0).epsilon(1e-12));
    CHECK_FALSE(p.has_grad());  // consumed
    CHECK(opt.steps_done() == 1);
}

TEST_CASE("adam matches a hand-stepped reference") {
    auto p = make_param({1}, {0.5});
    OptimizerConfig cfg;
    cfg.lr = 0.01;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.98;
    cfg.eps = 1e-9;
    Optimizer opt(cfg);

    double w = 0.5, m = 0.0, v = 0.0;
    const std::vector<double> grads = {2.0, -1.0, 0.5};
    for (size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        auto loss = sum(mul(p, Tensor::from_values({1}, {g})));
        backward(loss);
        opt.step({{"p", p}});

        m = 0.9 * m + 0.1 * g;
        v = 0.98 * v + 0.02 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(0.98, static_cast<double>(t)));
        w -= 0.01 * mhat / (std::sqrt(vhat) + 1e-9);
        CHECK(p.values()[0] == doctest::Approx(w).epsilon(1e-12));
    }
    CHECK(opt.has_state(p.id()));
    CHECK(opt.state_count() == 1);
}

TEST_CASE("warmup schedule rises linearly then decays as inverse sqrt") {
    OptimizerConfig cfg;
    cfg.lr = 1e-3;
    cfg.warmup_steps = 100;
    Optimizer opt(cfg);

    // Peak exactly at the warmup boundary.
    CHECK(opt.rate_for(100) == doctest::Approx(1e-3).epsilon(1e-12));
    // Linear ramp below it.
    CHECK(opt.rate_for(50) == doctest::Approx(0.5e-3).epsilon(1e-12));
    CHECK(opt.rate_for(1) == doctest::Approx(1e-5).epsilon(1e-12));
    // Inverse-sqrt decay beyond it.
    CHECK(opt.rate_for(400) == doctest::Approx(1e-3 * std::sqrt(100.0 / 400.0)).epsilon(1e-12));
    // Monotone through the ramp.
    for (int64_t s = 1; s < 100; ++s) CHECK(opt.rate_for(s) < opt.rate_for(s + 1));

    OptimizerConfig flat;
    flat.lr = 2e-4;
    Optimizer fo(flat);
    CHECK(fo.rate_for(1) == doctest::Approx(2e-4));
    CHECK(fo.rate_for(100000) == doctest::Approx(2e-4));
}

TEST_CASE("global norm clipping rescales the whole gradient") {
    auto p = make_param({2}, {0.0, 0.0});
    auto loss = sum(mul(p, Tensor::from_values({2}, {3.0, 4.0})));  // grad norm 5
    backward(loss);

    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.lr = 1.0;
    cfg.clip_norm = 1.0;
    Optimizer opt(cfg);
    opt.step({{"p", p}});
    CHECK(p.values()[0] == doctest::Approx(-3.0 / 5.0).epsilon(1e-12));
    CHECK(p.values()[1] == doctest::Approx(-4.0 / 5.0).epsilon(1e-12));

    // Under the threshold the gradient passes through untouched.
    auto q = make_param({1}, {0.0});
    backward(sum(mul(q, Tensor::from_values({1}, {0.5}))));
    opt.step({{"q", q}});
    CHECK(q.values()[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("optimizer rejects frozen parameters and skips gradless ones") {
    auto frozen = make_param({1}, {1.0}, true);
    Optimizer opt(OptimizerConfig{});
    CHECK_THROWS_AS(opt.step({{"w", frozen}}), ConfigError);

    auto idle = make_param({1}, {2.0});
    opt.step({{"idle", idle}});
    CHECK(idle.values()[0] == 2.0);
    CHECK_FALSE(opt.has_state(idle.id()));
}

TEST_CASE("training steps reduce the copy loss") {
    auto spec = tiny_spec();
    auto m = build_model(spec);
    auto batch = copy_batch(spec, 1);

    OptimizerConfig cfg;
    cfg.lr = 3e-3;
    Optimizer opt(cfg);

    const double first = train_step(m, batch, opt);
    double last = first;
    for (int i = 0; i < 40; ++i) last = train_step(m, batch, opt);
    CHECK(last < first);
    CHECK(opt.steps_done() == 41);
}

TEST_CASE("frozen reservoir parameters stay bitwise fixed under training") {
    auto spec = tiny_spec("LRL");
    auto m = build_model(spec);
    auto batch = copy_batch(spec, 2);

    std::vector<std::vector<double>> before;
    for (const auto& p : layer_params(m.encoder_layers[1])) before.push_back(p.tensor.values());

    Optimizer opt(OptimizerConfig{});
    for (int i = 0; i < 10; ++i) train_step(m, batch, opt);

    auto after = layer_params(m.encoder_layers[1]);
    for (size_t i = 0; i < after.size(); ++i) {
        CHECK(after[i].tensor.values() == before[i]);
    }
}

TEST_CASE("non-finite loss raises a numeric error naming the step") {
    auto spec = tiny_spec();
    auto m = build_model(spec);
    auto batch = copy_batch(spec, 3);
    m.out_b.mutable_values().assign(static_cast<size_t>(m.out_b.numel()),
                                    std::numeric_limits<double>::infinity());

    Optimizer opt(OptimizerConfig{});
    CHECK_THROWS_AS(train_step(m, batch, opt), NumericError);
}

TEST_CASE("lm training reduces loss") {
    ModelSpec spec = tiny_spec("LL");
    spec.arch = ModelArch::Lm;
    spec.decoder = StackPattern{};
    auto m = build_model(spec);

    TokenBatch input;
    input.batch = 2;
    input.time = 4;
    input.ids = {spec.bos_id(), 0, 1, 2, spec.bos_id(), 2, 1, 0};
    std::vector<int64_t> targets = {0, 1, 2, 3, 2, 1, 0, 3};
    std::vector<double> weights(8, 1.0);

    Optimizer opt(OptimizerConfig{});
    const double first = train_step_lm(m, input, targets, weights, opt);
    double last = first;
    for (int i = 0; i < 40; ++i) last = train_step_lm(m, input, targets, weights, opt);
    CHECK(last < first);
}

TEST_CASE("layerdrop validates p and reports drop counts") {
    auto spec = tiny_spec("LLL");
    auto m = build_model(spec);
    auto batch = copy_batch(spec, 4);
    Optimizer opt(OptimizerConfig{});
    Rng rng(7);

    LayerDropConfig bad;
    bad.p = 1.0;
    CHECK_THROWS_AS(layerdrop_step(m, batch, bad, rng, opt), ConfigError);
    bad.p = -0.1;
    CHECK_THROWS_AS(layerdrop_step(m, batch, bad, rng, opt), ConfigError);

    LayerDropConfig none;
    none.p = 0.0;
    auto r = layerdrop_step(m, batch, none, rng, opt);
    CHECK(r.dropped == 0);

    LayerDropConfig heavy;
    heavy.p = 0.5;
    int64_t total = 0;
    for (int i = 0; i < 60; ++i) total += layerdrop_step(m, batch, heavy, rng, opt).dropped;
    // 4 droppable layers (3 encoder + 1 decoder), 60 batches, p=.5: mean 120.
    CHECK(total > 60);
    CHECK(total < 180);
}

TEST_CASE("backskip reward is the sign-flipped gradient mean") {
    auto a = make_param({2}, {0.0, 0.0});
    auto b = make_param({2}, {0.0, 0.0});
    backward(sum(mul(a, Tensor::from_values({2}, {1.0, 3.0}))));
    // a's grads are {1, 3}; b has none and counts as zeros.
    CHECK(backskip_reward_from_grads({a, b}) == doctest::Approx(-1.0).epsilon(1e-12));
    a.zero_grad();

    CHECK_THROWS_AS(backskip_reward_from_grads({}), ConfigError);
}

TEST_CASE("backskip state construction is deterministic") {
    auto a = make_backskip_state(8, 11, BackskipConfig{});
    auto b = make_backskip_state(8, 11, BackskipConfig{});
    CHECK(a.policy_w.values() == b.policy_w.values());
    CHECK(a.value_w.values() == b.value_w.values());
    CHECK(a.params().size() == 4);
    CHECK(a.p_true == 1.0);
}

TEST_CASE("backskip core: warmup forces true gradients, anneal is exact") {
    // Toy graph: below = tanh(x w1), loss = mean((below w2 - y)^2).
    const int64_t d = 4;
    auto x = Tensor::from_values({2, d}, {0.1, -0.2, 0.3, 0.4, -0.1, 0.2, 0.0, 0.5});
    auto y = Tensor::from_values({2, 1}, {0.3, -0.2});
    Rng wr(3);
    std::vector<double> w1v(static_cast<size_t>(d * d)), w2v(static_cast<size_t>(d));
    for (auto& v : w1v) v = 0.3 * wr.gaussian();
    for (auto& v : w2v) v = 0.3 * wr.gaussian();
    auto w1 = make_param({d, d}, w1v);
    auto w2 = make_param({d, 1}, w2v);

    BackskipConfig cfg;
    cfg.warmup_steps = 5;
    cfg.anneal = 0.5;  // fast anneal so both branches appear quickly
    auto bs = make_backskip_state(d, 21, cfg);

    OptimizerConfig ocfg;
    ocfg.lr = 1e-3;
    Optimizer opt(ocfg);
    std::vector<NamedParam> trainable = {{"w1", w1}, {"w2", w2}};

    auto run_one = [&] {
        BackskipSegments seg;
        seg.below_output = resformer::tanh(matmul(x, w1));
        auto err = sub(matmul(seg.below_output, w2), y);
        seg.loss = mean(mul(err, err));
        seg.reward_params = {w2};
        return backskip_core(seg, bs, opt, trainable);
    };

    for (int i = 0; i < 5; ++i) {
        auto r = run_one();
        CHECK(r.used_true_backward);
        CHECK(bs.p_true == 1.0);  // warmup never anneals
    }

    int skipped = 0;
    for (int k = 1; k <= 12; ++k) {
        auto before_w2 = w2.values();
        auto before_w1 = w1.values();
        auto r = run_one();
        CHECK(bs.p_true == doctest::Approx(std::pow(0.5, k)).epsilon(1e-12));
        CHECK(w1.values() != before_w1);  // below the boundary always updates
        if (!r.used_true_backward) {
            ++skipped;
            CHECK(w2.values() == before_w2);  // above the boundary untouched
        }
    }
    CHECK(skipped > 0);  // p_true fell to ~2^-12; skips must have occurred
}

TEST_CASE("backskip model adapter needs a trainable sandwich") {
    auto good = tiny_spec("LRL");
    auto m = build_model(good);
    auto batch = copy_batch(good, 5);
    auto bs = make_backskip_state(good.d_model, 1, BackskipConfig{});
    Optimizer opt(OptimizerConfig{});
    auto r = backskip_step(m, batch, bs, opt);
    CHECK(r.used_true_backward);
    CHECK(std::isfinite(r.loss));

    // Leading reservoir, trailing reservoir, adjacent reservoirs, and no
    // reservoir at all: each breaks the below/above requirement.
    for (const char* pattern : {"RLL", "LLR", "LRRL", "LLL"}) {
        ModelSpec spec = tiny_spec(pattern);
        auto bad = build_model(spec);
        auto st = make_backskip_state(spec.d_model, 1, BackskipConfig{});
        CHECK_THROWS_AS(backskip_step(bad, batch, st, opt), ConfigError);
    }
}

TEST_CASE("greedy decode emits only payload tokens and stops") {
    auto spec = tiny_spec();
    auto m = build_model(spec);
    TokenBatch src;
    src.batch = 2;
    src.time = 3;
    src.ids = {0, 1, 2, 3, 4, spec.pad_id()};

    auto out = greedy_decode(m, src, 6);
    REQUIRE(out.size() == 2);
    for (const auto& seq : out) {
        CHECK(seq.size() <= 6);
        for (auto t : seq) {
            CHECK(t >= 0);
            CHECK(t < spec.vocab_size);
        }
    }

    // Deterministic.
    auto again = greedy_decode(m, src, 6);
    CHECK(out == again);
}

TEST_CASE("evaluate computes loss and bleu over batches") {
    auto spec = tiny_spec();
    auto m = build_model(spec);

    SyntheticSeq2SeqSpec task;
    task.task = TaskKind::Copy;
    task.vocab_size = spec.vocab_size;
    task.length_min = 2;
    task.length_max = 4;
    task.train_size = 2;
    task.val_size = 6;
    task.test_size = 2;
    task.seed = 31;
    auto data = generate_seq2seq(task);

    const double loss = evaluate(m, data.val, EvalMetric::Loss, 4);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);

    const double b = evaluate(m, data.val, EvalMetric::Bleu, 4);
    CHECK(b >= 0.0);
    CHECK(b <= 100.0);

    CHECK_THROWS_AS(evaluate(m, {}, EvalMetric::Loss), ConfigError);

    // Batch size never changes the metric, only the grouping.
    const double loss2 = evaluate(m, data.val, EvalMetric::Loss, 2);
    CHECK(loss == doctest::Approx(loss2).epsilon(1e-9));
}

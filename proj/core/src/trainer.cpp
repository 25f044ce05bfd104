#include "resformer/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "resformer/errors.hpp"
#include "resformer/ops.hpp"

namespace resformer {

double Optimizer::rate_for(int64_t step) const {
    if (cfg_.warmup_steps <= 0) return cfg_.lr;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void Optimizer::step(const std::vector<NamedParam>& params) {
    ++step_;
    const double lr = rate_for(step_);

    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& np : params) {
            if (!np.tensor.has_grad()) continue;
            for (double g : np.tensor.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }

    for (const auto& np : params) {
        Tensor t = np.tensor;
        if (t.frozen()) {
            throw ConfigError("frozen parameter '" + np.name + "' handed to the optimizer");
        }
        if (!t.has_grad()) continue;
        const auto& g = t.grad();
        auto& w = t.mutable_values();
        if (cfg_.kind == OptimizerKind::Sgd) {
            for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * scale * g[i];
        } else {
            Moments& mo = state_[t.id()];
            if (mo.m.empty()) {
                mo.m.assign(w.size(), 0.0);
                mo.v.assign(w.size(), 0.0);
            }
            const double b1 = cfg_.beta1, b2 = cfg_.beta2;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
            for (size_t i = 0; i < w.size(); ++i) {
                const double gi = scale * g[i];
                mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * gi;
                mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * gi * gi;
                const double mhat = mo.m[i] / bc1;
                const double vhat = mo.v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        t.zero_grad();
    }
}

Tensor seq2seq_loss_graph(const Model& m, const Seq2SeqBatch& batch, ForwardTrace* trace) {
    Tensor memory = encode(m, batch.src, trace);
    Tensor logits = decode_logits(m, memory, batch.src, batch.tgt_in);
    Tensor flat = reshape(logits, {batch.tgt_in.batch * batch.tgt_in.time, m.spec.model_vocab()});
    return cross_entropy(flat, batch.tgt_out, batch.tgt_weight);
}

Tensor lm_loss_graph(const Model& m, const TokenBatch& input, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights, ForwardTrace* trace) {
    Tensor logits = lm_logits(m, input, trace);
    Tensor flat = reshape(logits, {input.batch * input.time, m.spec.model_vocab()});
    return cross_entropy(flat, targets, weights);
}

namespace {

double finish_step(Model& m, const Tensor& loss, Optimizer& opt) {
    const double value = loss.item();
    if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at step " + std::to_string(opt.steps_done() + 1));
    }
    backward(loss);
    opt.step(trainable_params(m));
    return value;
}

}  // namespace

double train_step(Model& m, const Seq2SeqBatch& batch, Optimizer& opt) {
    return finish_step(m, seq2seq_loss_graph(m, batch), opt);
}

double train_step_lm(Model& m, const TokenBatch& input, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights, Optimizer& opt) {
    return finish_step(m, lm_loss_graph(m, input, targets, weights), opt);
}

LayerDropResult layerdrop_step(Model& m, const Seq2SeqBatch& batch, const LayerDropConfig& cfg,
                               Rng& rng, Optimizer& opt) {
    if (cfg.p < 0.0 || cfg.p >= 1.0) {
        throw ConfigError("layer drop probability must be in [0, 1), got " + std::to_string(cfg.p));
    }
    std::vector<bool> enc_drop(m.encoder_layers.size());
    std::vector<bool> dec_drop(m.decoder_layers.size());
    LayerDropResult res;
    for (size_t i = 0; i < enc_drop.size(); ++i) {
        enc_drop[i] = rng.bernoulli(cfg.p);
        res.dropped += enc_drop[i] ? 1 : 0;
        res.drop_mask.push_back(enc_drop[i]);
    }
    for (size_t j = 0; j < dec_drop.size(); ++j) {
        dec_drop[j] = rng.bernoulli(cfg.p);
        res.dropped += dec_drop[j] ? 1 : 0;
        res.drop_mask.push_back(dec_drop[j]);
    }
    Tensor memory = encode(m, batch.src, nullptr, &enc_drop);
    Tensor logits = decode_logits(m, memory, batch.src, batch.tgt_in, &dec_drop);
    Tensor flat = reshape(logits, {batch.tgt_in.batch * batch.tgt_in.time, m.spec.model_vocab()});
    Tensor loss = cross_entropy(flat, batch.tgt_out, batch.tgt_weight);
    res.loss = finish_step(m, loss, opt);
    return res;
}

std::vector<NamedParam> BackskipState::params() const {
    return {{"policy.w", policy_w},
            {"policy.b", policy_b},
            {"value.w", value_w},
            {"value.b", value_b}};
}

BackskipState make_backskip_state(int64_t state_dim, uint64_t seed, BackskipConfig cfg) {
    if (state_dim < 1) throw ConfigError("backskip state width must be >= 1");
    if (cfg.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    BackskipState st(cfg, mix_seed(seed, 4));
    // The policy output starts at zero so skipped steps inject pure
    // exploration noise until the reward actually asks for a direction; a
    // random initial mu is a persistent bias the optimizer integrates into
    // drift on every skipped step.
    st.policy_w = make_param({state_dim, state_dim},
                             std::vector<double>(static_cast<size_t>(state_dim * state_dim), 0.0));
    st.policy_b = init_param(ParamRole::Bias, {state_dim}, 0, false);
    st.value_w = init_param(ParamRole::Projection, {state_dim, 1}, mix_seed(seed, 1), false);
    st.value_b = init_param(ParamRole::Bias, {1}, 0, false);
    return st;
}

double backskip_reward_from_grads(const std::vector<Tensor>& params) {
    double total = 0.0;
    int64_t count = 0;
    for (const auto& t : params) {
        count += t.numel();
        if (!t.has_grad()) continue;
        for (double g : t.grad()) total += g;
    }
    if (count == 0) throw ConfigError("reward requested over zero parameters");
    return -total / static_cast<double>(count);
}

namespace {

// Mean over all leading dims: [..., d] -> [1, d], detached.
Tensor pooled_state(const Tensor& t) {
    const int64_t d = t.dim(-1);
    const int64_t rows = t.numel() / d;
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    const auto& v = t.values();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] += v[static_cast<size_t>(r * d + j)];
    }
    for (auto& x : out) x /= static_cast<double>(rows);
    return Tensor::from_values({1, d}, std::move(out));
}

}  // namespace

BackskipStepResult backskip_core(const BackskipSegments& seg, BackskipState& bs, Optimizer& opt,
                                 const std::vector<NamedParam>& trainable) {
    ++bs.steps;
    const bool in_warmup = bs.steps <= bs.cfg.warmup_steps;
    const bool use_true = in_warmup || bs.rng.bernoulli(bs.p_true);

    BackskipStepResult res;
    res.loss = seg.loss.item();
    res.used_true_backward = use_true;
    if (!std::isfinite(res.loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(bs.steps));
    }

    const int64_t d = seg.below_output.dim(-1);
    Tensor s = pooled_state(seg.below_output);

    if (use_true) {
        backward(seg.loss);
        std::vector<Tensor> reward_src = seg.reward_params;
        res.reward = bs.cfg.reward_from_loss ? -res.loss : backskip_reward_from_grads(reward_src);

        // a ~ N(mu(s), std); advantage uses the value head as baseline
        Tensor mu = add(matmul(s, bs.policy_w), bs.policy_b);  // [1, d]
        std::vector<double> av(static_cast<size_t>(d));
        for (int64_t j = 0; j < d; ++j) {
            av[static_cast<size_t>(j)] =
                mu.values()[static_cast<size_t>(j)] + bs.cfg.action_noise_std * bs.rng.gaussian();
        }
        Tensor a = Tensor::from_values({1, d}, av);
        Tensor v = add(matmul(a, bs.value_w), bs.value_b);  // [1, 1]
        const double advantage = res.reward - v.item();

        // minimize -log N(a | mu, std) * advantage plus the value MSE
        Tensor diff = sub(a, mu);
        const double var = bs.cfg.action_noise_std * bs.cfg.action_noise_std;
        Tensor policy_loss = scale(sum(mul(diff, diff)), 0.5 * advantage / var);
        Tensor verr = sub(Tensor::from_values({1}, {res.reward}), reshape(v, {1}));
        Tensor value_loss = mul(verr, verr);
        backward(add(policy_loss, value_loss));

        std::vector<NamedParam> all = trainable;
        for (auto& np : bs.params()) all.push_back(np);
        opt.step(all);
    } else {
        // no backward above the boundary; inject the policy action as the
        // gradient estimate, broadcast across tokens
        std::vector<double> av(static_cast<size_t>(d));
        {
            NoGradGuard ng;
            Tensor mu = add(matmul(s, bs.policy_w), bs.policy_b);
            for (int64_t j = 0; j < d; ++j) {
                av[static_cast<size_t>(j)] = mu.values()[static_cast<size_t>(j)] +
                                             bs.cfg.action_noise_std * bs.rng.gaussian();
            }
        }
        const int64_t rows = seg.below_output.numel() / d;
        std::vector<double> seed_grad(static_cast<size_t>(rows * d));
        for (int64_t r = 0; r < rows; ++r) {
            std::copy(av.begin(), av.end(), seed_grad.begin() + r * d);
        }
        backward_from(seg.below_output, seed_grad);
        opt.step(trainable);
    }

    if (!in_warmup) bs.p_true *= bs.cfg.anneal;
    return res;
}

BackskipStepResult backskip_step(Model& m, const Seq2SeqBatch& batch, BackskipState& bs,
                                 Optimizer& opt) {
    int64_t r = -1;
    for (size_t i = 0; i < m.encoder_layers.size(); ++i) {
        if (layer_frozen(m.encoder_layers[i])) {
            r = static_cast<int64_t>(i);
            break;
        }
    }
    if (r < 0) throw ConfigError("backskipping requires a frozen reservoir layer");
    if (r == 0 || r + 1 >= static_cast<int64_t>(m.encoder_layers.size()) ||
        layer_frozen(m.encoder_layers[static_cast<size_t>(r + 1)])) {
        throw ConfigError("backskipping needs a trainable layer below and above the reservoir");
    }

    ForwardTrace trace;
    BackskipSegments seg;
    seg.loss = seq2seq_loss_graph(m, batch, &trace);
    seg.below_output = trace.layer_outputs[static_cast<size_t>(r - 1)];
    for (const auto& np : layer_params(m.encoder_layers[static_cast<size_t>(r + 1)])) {
        seg.reward_params.push_back(np.tensor);
    }
    return backskip_core(seg, bs, opt, trainable_params(m));
}

std::vector<std::vector<int64_t>> greedy_decode(const Model& m, const TokenBatch& src,
                                                int64_t max_len) {
    NoGradGuard ng;
    Tensor memory = encode(m, src);
    const int64_t B = src.batch;
    const int64_t v = m.spec.model_vocab();
    std::vector<std::vector<int64_t>> out(static_cast<size_t>(B));
    std::vector<int64_t> ys(static_cast<size_t>(B), m.spec.bos_id());
    std::vector<bool> done(static_cast<size_t>(B), false);

    TokenBatch tgt;
    tgt.batch = B;
    tgt.time = 1;
    tgt.ids = ys;
    const int64_t limit = std::min(max_len, m.spec.max_len - 1);
    for (int64_t t = 0; t < limit; ++t) {
        Tensor logits = decode_logits(m, memory, src, tgt);  // [B, t+1, v]
        const auto& lv = logits.values();
        bool all_done = true;
        std::vector<int64_t> next(static_cast<size_t>(B), m.spec.pad_id());
        for (int64_t b = 0; b < B; ++b) {
            if (done[static_cast<size_t>(b)]) continue;
            const double* row = lv.data() + (b * tgt.time + t) * v;
            // argmax over payload tokens and EOS; PAD and BOS are never
            // legal decoder outputs
            int64_t best = -1;
            for (int64_t j = 0; j < v; ++j) {
                if (j == m.spec.pad_id() || j == m.spec.bos_id()) continue;
                if (best < 0 || row[j] > row[best]) best = j;
            }
            if (best == m.spec.eos_id()) {
                done[static_cast<size_t>(b)] = true;
            } else {
                out[static_cast<size_t>(b)].push_back(best);
                all_done = false;
            }
            next[static_cast<size_t>(b)] = best;
        }
        if (all_done) break;
        // grow the decoder input with this step's tokens
        TokenBatch grown;
        grown.batch = B;
        grown.time = tgt.time + 1;
        grown.ids.resize(static_cast<size_t>(B * grown.time));
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t i = 0; i < tgt.time; ++i) {
                grown.ids[static_cast<size_t>(b * grown.time + i)] = tgt.at(b, i);
            }
            grown.ids[static_cast<size_t>(b * grown.time + tgt.time)] = next[static_cast<size_t>(b)];
        }
        tgt = std::move(grown);
    }
    return out;
}

double evaluate(const Model& m, const std::vector<Seq2SeqPair>& data, EvalMetric metric,
                int64_t batch_size) {
    if (data.empty()) throw ConfigError("evaluation over an empty dataset");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    NoGradGuard ng;

    if (metric == EvalMetric::Bleu) {
        std::vector<std::vector<int64_t>> hyps, refs;
        for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
            const size_t count = std::min(static_cast<size_t>(batch_size), data.size() - begin);
            Seq2SeqBatch b = make_batch(data, begin, count, m.spec.pad_id(), m.spec.bos_id(),
                                        m.spec.eos_id());
            int64_t max_tgt = 0;
            for (size_t i = begin; i < begin + count; ++i) {
                max_tgt = std::max(max_tgt, static_cast<int64_t>(data[i].target.size()));
            }
            auto decoded = greedy_decode(m, b.src, max_tgt + 8);
            for (size_t i = 0; i < count; ++i) {
                hyps.push_back(std::move(decoded[i]));
                refs.push_back(data[begin + i].target);
            }
        }
        return bleu(hyps, refs);
    }

    double weighted = 0.0, weight = 0.0;
    for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(static_cast<size_t>(batch_size), data.size() - begin);
        Seq2SeqBatch b =
            make_batch(data, begin, count, m.spec.pad_id(), m.spec.bos_id(), m.spec.eos_id());
        double wsum = 0.0;
        for (double w : b.tgt_weight) wsum += w;
        weighted += seq2seq_loss_graph(m, b).item() * wsum;
        weight += wsum;
    }
    return weighted / weight;
}

}  // namespace resformer

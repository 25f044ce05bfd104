#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "resformer/stack.hpp"
#include "resformer/tasks.hpp"

namespace resformer {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 3e-4;  // peak rate under the warmup schedule, constant otherwise
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    int64_t warmup_steps = 0;  // 0 disables the inverse-sqrt schedule
    double clip_norm = 0.0;    // 0 disables global-norm clipping
};

// Applies SGD or Adam to whatever parameters it is handed. Moment state is
// keyed by parameter id and is never created for frozen parameters.
class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    // One update using each parameter's accumulated gradient; consumes
    // (zeroes) the gradient buffers it used. Parameters without a gradient
    // are skipped; frozen parameters are rejected.
    void step(const std::vector<NamedParam>& params);

    int64_t steps_done() const { return step_; }
    double rate_for(int64_t step) const;  // schedule value at 1-based step
    bool has_state(uint64_t param_id) const { return state_.count(param_id) > 0; }
    size_t state_count() const { return state_.size(); }
    const OptimizerConfig& config() const { return cfg_; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    OptimizerConfig cfg_;
    int64_t step_ = 0;
    std::unordered_map<uint64_t, Moments> state_;
};

// Weighted token cross-entropy over the decoder logits; padding gets
// weight 0 and contributes exactly nothing.
Tensor seq2seq_loss_graph(const Model& m, const Seq2SeqBatch& batch, ForwardTrace* trace = nullptr);

Tensor lm_loss_graph(const Model& m, const TokenBatch& input, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights, ForwardTrace* trace = nullptr);

// Forward, backward, optimizer update over every non-frozen parameter.
// Non-finite loss raises a numeric error naming the step index.
double train_step(Model& m, const Seq2SeqBatch& batch, Optimizer& opt);
double train_step_lm(Model& m, const TokenBatch& input, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights, Optimizer& opt);

struct LayerDropConfig {
    double p = 0.0;  // per-layer drop probability, 0 <= p < 1
};

struct LayerDropResult {
    double loss = 0.0;
    int64_t dropped = 0;           // layers skipped this batch
    std::vector<bool> drop_mask;   // encoder slots then decoder slots
};

// Training step where every stack layer is independently skipped with
// probability p for this batch. Evaluation paths never drop.
LayerDropResult layerdrop_step(Model& m, const Seq2SeqBatch& batch, const LayerDropConfig& cfg,
                               Rng& rng, Optimizer& opt);

struct BackskipConfig {
    int64_t warmup_steps = 100;
    double anneal = 0.99;
    double action_noise_std = 1.0;
    bool reward_from_loss = false;  // R = -loss instead of the gradient mean
};

// Policy head s -> mu and value head a -> V(a), plus the annealed
// probability of taking the true backward pass.
struct BackskipState {
    BackskipConfig cfg;
    double p_true = 1.0;
    int64_t steps = 0;
    Tensor policy_w, policy_b;  // [d, d], [d]
    Tensor value_w, value_b;    // [d, 1], [1]
    Rng rng;

    BackskipState(BackskipConfig c, uint64_t seed) : cfg(c), rng(seed) {}
    std::vector<NamedParam> params() const;
};

BackskipState make_backskip_state(int64_t state_dim, uint64_t seed, BackskipConfig cfg);

// Sign-flipped mean over every entry of the given parameters' gradients.
double backskip_reward_from_grads(const std::vector<Tensor>& params);

struct BackskipStepResult {
    double loss = 0.0;
    bool used_true_backward = false;
    double reward = 0.0;  // only meaningful on true-backward steps
};

// The traced pieces the backskip decision needs: the full loss graph, the
// boundary activation below the reservoir, and the parameters of the layer
// above the reservoir (reward source).
struct BackskipSegments {
    Tensor loss;
    Tensor below_output;                 // output of the layer under the reservoir
    std::vector<Tensor> reward_params;   // parameters of the layer above it
};

// On true-backward steps: full backward, REINFORCE + value regression on the
// heads, update everything. On skipped steps: no backward above the
// boundary; the sampled action is injected as the gradient estimate at the
// boundary and only parameters below it receive gradients.
BackskipStepResult backskip_core(const BackskipSegments& seg, BackskipState& bs, Optimizer& opt,
                                 const std::vector<NamedParam>& trainable);

// Model adapter: the reservoir is the single frozen encoder slot; requires a
// trainable layer below and above it.
BackskipStepResult backskip_step(Model& m, const Seq2SeqBatch& batch, BackskipState& bs,
                                 Optimizer& opt);

enum class EvalMetric { Bleu, Loss };

// Greedy argmax decoding until EOS (or max_len); returns payload tokens.
std::vector<std::vector<int64_t>> greedy_decode(const Model& m, const TokenBatch& src,
                                                int64_t max_len);

// Deterministic; no layer dropping, no sampling. Empty dataset is an error.
double evaluate(const Model& m, const std::vector<Seq2SeqPair>& data, EvalMetric metric,
                int64_t batch_size = 32);

}  // namespace resformer

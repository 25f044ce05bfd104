#include "resformer/layers.hpp"

#include <cmath>

#include "resformer/errors.hpp"
#include "resformer/ops.hpp"

namespace resformer {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
    return layer_norm(x, p.gamma, p.beta);
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& p, const Tensor& mask) {
    const int64_t B = q_in.dim(0), Tq = q_in.dim(1), d = q_in.dim(2);
    const int64_t Tk = k_in.dim(1);
    const int64_t h = p.heads;
    if (d % h != 0) {
        throw ConfigError("model width " + std::to_string(d) + " not divisible by " +
                          std::to_string(h) + " heads");
    }
    const int64_t dh = d / h;

    auto split_heads = [&](const Tensor& t, int64_t T) {
        return transpose(reshape(t, {B, T, h, dh}), 1, 2);  // [B, h, T, dh]
    };
    Tensor q = split_heads(linear(q_in, p.wq, p.bq), Tq);
    Tensor k = split_heads(linear(k_in, p.wk, p.bk), Tk);
    Tensor v = split_heads(linear(v_in, p.wv, p.bv), Tk);

    Tensor scores = scale(matmul(q, transpose(k, -1, -2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask.defined()) {
        Tensor m = mask;
        if (m.rank() == 3) m = reshape(m, {m.dim(0), 1, m.dim(1), m.dim(2)});
        scores = add(scores, m);  // broadcasts over heads
    }
    Tensor attn = softmax(scores, -1);
    Tensor ctx = reshape(transpose(matmul(attn, v), 1, 2), {B, Tq, d});
    return linear(ctx, p.wo, p.bo);
}

Tensor apply_ffn(const Tensor& x, const FfnParams& p) {
    return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

std::vector<NamedParam> TransformerLayerParams::params() const {
    return {
        {"ln1.gamma", ln1.gamma}, {"ln1.beta", ln1.beta},
        {"attn.wq", attn.wq},     {"attn.bq", attn.bq},
        {"attn.wk", attn.wk},     {"attn.bk", attn.bk},
        {"attn.wv", attn.wv},     {"attn.bv", attn.bv},
        {"attn.wo", attn.wo},     {"attn.bo", attn.bo},
        {"ln2.gamma", ln2.gamma}, {"ln2.beta", ln2.beta},
        {"ffn.w1", ffn.w1},       {"ffn.b1", ffn.b1},
        {"ffn.w2", ffn.w2},       {"ffn.b2", ffn.b2},
    };
}

Tensor transformer_layer_forward(const Tensor& x, const TransformerLayerParams& p,
                                 const Tensor& mask) {
    Tensor n1 = apply_layer_norm(x, p.ln1);
    Tensor h = add(multi_head_attention(n1, n1, n1, p.attn, mask), x);
    return add(apply_ffn(apply_layer_norm(h, p.ln2), p.ffn), h);
}

std::vector<NamedParam> DecoderLayerParams::params() const {
    std::vector<NamedParam> out = {
        {"ln1.gamma", ln1.gamma},    {"ln1.beta", ln1.beta},
        {"self.wq", self_attn.wq},   {"self.bq", self_attn.bq},
        {"self.wk", self_attn.wk},   {"self.bk", self_attn.bk},
        {"self.wv", self_attn.wv},   {"self.bv", self_attn.bv},
        {"self.wo", self_attn.wo},   {"self.bo", self_attn.bo},
        {"ln2.gamma", ln2.gamma},    {"ln2.beta", ln2.beta},
        {"cross.wq", cross_attn.wq}, {"cross.bq", cross_attn.bq},
        {"cross.wk", cross_attn.wk}, {"cross.bk", cross_attn.bk},
        {"cross.wv", cross_attn.wv}, {"cross.bv", cross_attn.bv},
        {"cross.wo", cross_attn.wo}, {"cross.bo", cross_attn.bo},
        {"ln3.gamma", ln3.gamma},    {"ln3.beta", ln3.beta},
        {"ffn.w1", ffn.w1},          {"ffn.b1", ffn.b1},
        {"ffn.w2", ffn.w2},          {"ffn.b2", ffn.b2},
    };
    return out;
}

Tensor decoder_layer_forward(const Tensor& x, const Tensor& memory, const DecoderLayerParams& p,
                             const Tensor& self_mask, const Tensor& cross_mask) {
    Tensor n1 = apply_layer_norm(x, p.ln1);
    Tensor h1 = add(multi_head_attention(n1, n1, n1, p.self_attn, self_mask), x);
    Tensor n2 = apply_layer_norm(h1, p.ln2);
    Tensor h2 = add(multi_head_attention(n2, memory, memory, p.cross_attn, cross_mask), h1);
    return add(apply_ffn(apply_layer_norm(h2, p.ln3), p.ffn), h2);
}

std::vector<NamedParam> FfnReservoirParams::params() const {
    return {
        {"ln.gamma", ln.gamma}, {"ln.beta", ln.beta}, {"ffn.w1", ffn.w1},
        {"ffn.b1", ffn.b1},     {"ffn.w2", ffn.w2},   {"ffn.b2", ffn.b2},
    };
}

Tensor ffn_reservoir_forward(const Tensor& x, const FfnReservoirParams& p) {
    return add(apply_ffn(apply_layer_norm(x, p.ln), p.ffn), x);
}

namespace {

// One GRU step: h' = (1 - z) * h + z * htilde.
Tensor gru_step(const Tensor& xt, const Tensor& h, const GruCellParams& c) {
    Tensor z = sigmoid(add(linear(xt, c.wz, c.bz), matmul(h, c.uz)));
    Tensor r = sigmoid(add(linear(xt, c.wr, c.br), matmul(h, c.ur)));
    Tensor htilde = tanh(add(linear(xt, c.wh, c.bh), matmul(mul(r, h), c.uh)));
    Tensor keep = mul(affine(z, -1.0, 1.0), h);
    return add(keep, mul(z, htilde));
}

// Per-step states [B, T, g], scanning forward or backward from zeros.
Tensor gru_scan(const Tensor& x, const GruCellParams& c, int64_t hidden, bool reverse) {
    const int64_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    Tensor h = Tensor::zeros({B, hidden});
    std::vector<Tensor> states(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) {
        const int64_t t = reverse ? T - 1 - i : i;
        Tensor xt = reshape(slice(x, 1, t, 1), {B, d});
        h = gru_step(xt, h, c);
        states[static_cast<size_t>(t)] = reshape(h, {B, 1, hidden});
    }
    return concat(states, 1);
}

}  // namespace

std::vector<NamedParam> BiGruParams::params() const {
    std::vector<NamedParam> out;
    auto push_cell = [&](const std::string& prefix, const GruCellParams& c) {
        out.push_back({prefix + ".wz", c.wz});
        out.push_back({prefix + ".uz", c.uz});
        out.push_back({prefix + ".bz", c.bz});
        out.push_back({prefix + ".wr", c.wr});
        out.push_back({prefix + ".ur", c.ur});
        out.push_back({prefix + ".br", c.br});
        out.push_back({prefix + ".wh", c.wh});
        out.push_back({prefix + ".uh", c.uh});
        out.push_back({prefix + ".bh", c.bh});
    };
    push_cell("fwd", fwd);
    push_cell("bwd", bwd);
    out.push_back({"merge.w", merge_w});
    out.push_back({"merge.b", merge_b});
    return out;
}

Tensor bigru_forward(const Tensor& x, const BiGruParams& p) {
    if (x.rank() != 3) throw ShapeError("bigru input must be [B, T, d], got " + shape_str(x.shape()));
    Tensor hf = gru_scan(x, p.fwd, p.hidden, false);
    Tensor hb = gru_scan(x, p.bwd, p.hidden, true);
    Tensor cat = concat({hf, hb}, 2);
    return add(linear(cat, p.merge_w, p.merge_b), x);
}

std::vector<NamedParam> ConvReservoirParams::params() const {
    return {
        {"ln.gamma", ln.gamma},
        {"ln.beta", ln.beta},
        {"taps", tap_logits},
        {"mix", mix},
    };
}

Tensor conv_reservoir_forward(const Tensor& x, const ConvReservoirParams& p) {
    Tensor y = apply_layer_norm(x, p.ln);
    Tensor taps = softmax(p.tap_logits, 0);
    Tensor z = depthwise_conv1d(y, taps);
    return add(matmul(z, p.mix), x);
}

Tensor causal_mask(int64_t t) {
    std::vector<double> m(static_cast<size_t>(t * t), 0.0);
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = i + 1; j < t; ++j) m[static_cast<size_t>(i * t + j)] = -1e9;
    }
    return Tensor::from_values({t, t}, std::move(m));
}

namespace {

LayerNormParams make_ln(int64_t d, bool frozen) {
    return {init_param(ParamRole::Gain, {d}, 0, frozen),
            init_param(ParamRole::Shift, {d}, 0, frozen)};
}

AttentionParams make_attention(int64_t d, int64_t heads, uint64_t seed, bool frozen) {
    if (heads <= 0 || d % heads != 0) {
        throw ConfigError("model width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.heads = heads;
    p.wq = init_param(ParamRole::Projection, {d, d}, mix_seed(seed, 0), frozen);
    p.bq = init_param(ParamRole::Bias, {d}, 0, frozen);
    p.wk = init_param(ParamRole::Projection, {d, d}, mix_seed(seed, 1), frozen);
    p.bk = init_param(ParamRole::Bias, {d}, 0, frozen);
    p.wv = init_param(ParamRole::Projection, {d, d}, mix_seed(seed, 2), frozen);
    p.bv = init_param(ParamRole::Bias, {d}, 0, frozen);
    p.wo = init_param(ParamRole::Projection, {d, d}, mix_seed(seed, 3), frozen);
    p.bo = init_param(ParamRole::Bias, {d}, 0, frozen);
    return p;
}

FfnParams make_ffn(int64_t d, int64_t d_ff, uint64_t seed, bool frozen) {
    FfnParams p;
    p.w1 = init_param(ParamRole::Projection, {d, d_ff}, mix_seed(seed, 0), frozen);
    p.b1 = init_param(ParamRole::Bias, {d_ff}, 0, frozen);
    p.w2 = init_param(ParamRole::Projection, {d_ff, d}, mix_seed(seed, 1), frozen);
    p.b2 = init_param(ParamRole::Bias, {d}, 0, frozen);
    return p;
}

GruCellParams make_gru_cell(int64_t d, int64_t g, uint64_t seed, bool frozen) {
    GruCellParams c;
    c.wz = init_param(ParamRole::Projection, {d, g}, mix_seed(seed, 0), frozen);
    c.uz = init_param(ParamRole::Projection, {g, g}, mix_seed(seed, 1), frozen);
    c.bz = init_param(ParamRole::Bias, {g}, 0, frozen);
    c.wr = init_param(ParamRole::Projection, {d, g}, mix_seed(seed, 2), frozen);
    c.ur = init_param(ParamRole::Projection, {g, g}, mix_seed(seed, 3), frozen);
    c.br = init_param(ParamRole::Bias, {g}, 0, frozen);
    c.wh = init_param(ParamRole::Projection, {d, g}, mix_seed(seed, 4), frozen);
    c.uh = init_param(ParamRole::Projection, {g, g}, mix_seed(seed, 5), frozen);
    c.bh = init_param(ParamRole::Bias, {g}, 0, frozen);
    return c;
}

}  // namespace

TransformerLayerParams make_transformer_layer(int64_t d, int64_t heads, int64_t d_ff,
                                              uint64_t seed, bool frozen) {
    TransformerLayerParams p;
    p.frozen = frozen;
    p.ln1 = make_ln(d, frozen);
    p.attn = make_attention(d, heads, mix_seed(seed, 1), frozen);
    p.ln2 = make_ln(d, frozen);
    p.ffn = make_ffn(d, d_ff, mix_seed(seed, 2), frozen);
    return p;
}

DecoderLayerParams make_decoder_layer(int64_t d, int64_t heads, int64_t d_ff, uint64_t seed,
                                      bool frozen) {
    DecoderLayerParams p;
    p.frozen = frozen;
    p.ln1 = make_ln(d, frozen);
    p.self_attn = make_attention(d, heads, mix_seed(seed, 1), frozen);
    p.ln2 = make_ln(d, frozen);
    p.cross_attn = make_attention(d, heads, mix_seed(seed, 2), frozen);
    p.ln3 = make_ln(d, frozen);
    p.ffn = make_ffn(d, d_ff, mix_seed(seed, 3), frozen);
    return p;
}

namespace {

// Reservoir kinds always draw the reservoir (orthogonal) initialization;
// the frozen argument only decides whether the values train afterwards.
template <typename Params>
void set_trainable(Params& p) {
    for (auto& np : p.params()) np.tensor.set_frozen(false);
}

}  // namespace

FfnReservoirParams make_ffn_reservoir(int64_t d, int64_t d_ff, uint64_t seed, bool frozen) {
    FfnReservoirParams p;
    p.frozen = frozen;
    p.ln = make_ln(d, true);
    p.ffn = make_ffn(d, d_ff, mix_seed(seed, 1), true);
    if (!frozen) set_trainable(p);
    return p;
}

BiGruParams make_bigru_reservoir(int64_t d, uint64_t seed, bool frozen, int64_t width_mult) {
    if (width_mult < 1) throw ConfigError("bigru width multiplier must be >= 1");
    BiGruParams p;
    p.frozen = frozen;
    p.hidden = width_mult * d;
    p.fwd = make_gru_cell(d, p.hidden, mix_seed(seed, 1), true);
    p.bwd = make_gru_cell(d, p.hidden, mix_seed(seed, 2), true);
    p.merge_w = init_param(ParamRole::Projection, {2 * p.hidden, d}, mix_seed(seed, 3), true);
    p.merge_b = init_param(ParamRole::Bias, {d}, 0, true);
    if (!frozen) set_trainable(p);
    return p;
}

ConvReservoirParams make_conv_reservoir(int64_t d, int64_t kernel_width, uint64_t seed,
                                        bool frozen) {
    if (kernel_width < 1 || kernel_width % 2 == 0) {
        throw ConfigError("conv kernel width must be odd and positive, got " +
                          std::to_string(kernel_width));
    }
    ConvReservoirParams p;
    p.frozen = frozen;
    p.ln = make_ln(d, true);
    // taps start as Gaussian logits; softmax keeps them a convex combination
    Rng rng(mix_seed(seed, 1));
    std::vector<double> logits(static_cast<size_t>(kernel_width * d));
    for (auto& v : logits) v = rng.gaussian();
    p.tap_logits = make_param({kernel_width, d}, std::move(logits), true);
    p.mix = init_param(ParamRole::Projection, {d, d}, mix_seed(seed, 2), true);
    if (!frozen) set_trainable(p);
    return p;
}

}  // namespace resformer

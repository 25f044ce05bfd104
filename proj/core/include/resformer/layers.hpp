#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resformer/init.hpp"
#include "resformer/tensor.hpp"

namespace resformer {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// y = x @ w + b for x [..., in], w [in, out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct LayerNormParams {
    Tensor gamma, beta;
};

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p);

struct AttentionParams {
    int64_t heads = 1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention over h heads. An additive mask may be
// [B, Tq, Tk] (per example) or [Tq, Tk] (shared); masked entries hold a
// large negative value.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& p, const Tensor& mask = Tensor());

struct FfnParams {
    Tensor w1, b1, w2, b2;
};

Tensor apply_ffn(const Tensor& x, const FfnParams& p);

struct TransformerLayerParams {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    FfnParams ffn;
    bool frozen = false;
    std::vector<NamedParam> params() const;
};

// Pre-norm residual layer: H = MHSA(LN(x)) + x; out = FFN(LN(H)) + H.
Tensor transformer_layer_forward(const Tensor& x, const TransformerLayerParams& p,
                                 const Tensor& mask = Tensor());

struct DecoderLayerParams {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    FfnParams ffn;
    bool frozen = false;
    std::vector<NamedParam> params() const;
};

// Pre-norm decoder layer: masked self-attention, attention over the encoder
// memory, then the FFN block, each with a residual connection.
Tensor decoder_layer_forward(const Tensor& x, const Tensor& memory, const DecoderLayerParams& p,
                             const Tensor& self_mask = Tensor(),
                             const Tensor& cross_mask = Tensor());

struct FfnReservoirParams {
    LayerNormParams ln;
    FfnParams ffn;
    bool frozen = true;
    std::vector<NamedParam> params() const;
};

// out = FFN(LN(x)) + x. Token-local: no cross-token mixing.
Tensor ffn_reservoir_forward(const Tensor& x, const FfnReservoirParams& p);

struct GruCellParams {
    // input projections [d, g], recurrent matrices [g, g], biases [g]
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wh, uh, bh;
};

struct BiGruParams {
    int64_t hidden = 0;  // g = width_mult * d
    GruCellParams fwd, bwd;
    Tensor merge_w, merge_b;  // [2g, d], [d]
    bool frozen = true;
    std::vector<NamedParam> params() const;
};

// Runs the sequence through forward and backward GRUs from zero states,
// concatenates the per-step states [B, T, 2g], merges back to d and adds
// the residual.
Tensor bigru_forward(const Tensor& x, const BiGruParams& p);

struct ConvReservoirParams {
    LayerNormParams ln;
    Tensor tap_logits;  // [K, d]; softmax over K gives the kernel taps
    Tensor mix;         // [d, d] pointwise mix
    bool frozen = true;
    std::vector<NamedParam> params() const;
};

// out = LN(x) -> depthwise conv with softmax-normalized taps -> pointwise
// mix -> + x. Odd kernel width keeps the padded length symmetric.
Tensor conv_reservoir_forward(const Tensor& x, const ConvReservoirParams& p);

// [T, T] additive mask: 0 where key position <= query position, else -1e9.
Tensor causal_mask(int64_t t);

// Builders. Transformer and decoder layers key their initialization on the
// frozen flag: frozen draws orthogonal projections, trainable draws
// Xavier-uniform. The reservoir-only kinds below always draw the reservoir
// initialization; their frozen argument controls trainability alone, so the
// same seed yields the same values either way. All values are a pure
// function of (dimensions, seed) and reconstruct exactly from the spec.
TransformerLayerParams make_transformer_layer(int64_t d, int64_t heads, int64_t d_ff,
                                              uint64_t seed, bool frozen = false);
DecoderLayerParams make_decoder_layer(int64_t d, int64_t heads, int64_t d_ff, uint64_t seed,
                                      bool frozen = false);
FfnReservoirParams make_ffn_reservoir(int64_t d, int64_t d_ff, uint64_t seed, bool frozen = true);
BiGruParams make_bigru_reservoir(int64_t d, uint64_t seed, bool frozen = true,
                                 int64_t width_mult = 1);
ConvReservoirParams make_conv_reservoir(int64_t d, int64_t kernel_width, uint64_t seed,
                                        bool frozen = true);

}  // namespace resformer

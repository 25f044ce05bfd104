#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "resformer/layers.hpp"
#include "resformer/tensor.hpp"

namespace resformer {

enum class LayerKind { Transformer, FfnReservoir, BiGruReservoir, ConvReservoir };
enum class PlacementStrategy { AlternatingMiddle, Bottom, Middle, Top };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);
PlacementStrategy placement_from_name(const std::string& s);

struct Slot {
    LayerKind kind = LayerKind::Transformer;
    bool frozen = false;
};

struct StackPattern {
    std::vector<Slot> slots;

    int64_t size() const { return static_cast<int64_t>(slots.size()); }
    int64_t reservoir_count() const;
    // 'L' = trainable transformer, 'R' = frozen reservoir, 'r' = a reservoir
    // slot running unfrozen (comparison runs only).
    std::string to_string() const;
    static StackPattern parse(const std::string& s, LayerKind reservoir_kind);
};

// Distributes n_reservoir frozen slots over n_total positions. The
// alternating strategy centers the block R(LR)^(k-1); ties break left.
// When k exceeds the no-adjacent capacity (n+1)/2, the dual construction
// centers the trainable block instead and splits the surplus R runs across
// both ends, the smaller run first.
StackPattern place_reservoirs(int64_t n_total, int64_t n_reservoir, PlacementStrategy strategy,
                              LayerKind reservoir_kind = LayerKind::Transformer);

enum class ModelArch { Seq2Seq, Lm };

struct ModelSpec {
    ModelArch arch = ModelArch::Seq2Seq;
    int64_t d_model = 64;
    int64_t heads = 4;
    int64_t d_ff = 0;  // 0 -> 4 * d_model
    int64_t vocab_size = 0;  // payload tokens; pad/bos/eos are appended
    StackPattern encoder;    // the only stack in LM mode
    StackPattern decoder;    // seq2seq only
    uint64_t seed = 0;
    // When false, reservoir slots keep their reservoir initialization but
    // train normally; used to compare against the frozen run.
    bool freeze_reservoirs = true;
    int64_t max_len = 512;
    int64_t conv_kernel_width = 3;
    int64_t bigru_width_mult = 1;

    int64_t ffn_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    int64_t model_vocab() const { return vocab_size + 3; }
    int64_t pad_id() const { return vocab_size; }
    int64_t bos_id() const { return vocab_size + 1; }
    int64_t eos_id() const { return vocab_size + 2; }
};

using EncoderLayer =
    std::variant<TransformerLayerParams, FfnReservoirParams, BiGruParams, ConvReservoirParams>;

struct TokenBatch {
    int64_t batch = 0;
    int64_t time = 0;
    std::vector<int64_t> ids;  // [batch * time], row-major, padded

    int64_t at(int64_t b, int64_t t) const { return ids[static_cast<size_t>(b * time + t)]; }
};

struct ForwardTrace {
    Tensor input_embedding;
    std::vector<Tensor> layer_outputs;  // one per stack layer, pre final norm
    Tensor final_output;
};

struct Model {
    ModelSpec spec;
    Tensor src_embed;  // [model_vocab, d]
    Tensor tgt_embed;  // seq2seq only
    Tensor out_w, out_b;
    Tensor pos;  // sinusoidal table [max_len, d], constant
    std::vector<EncoderLayer> encoder_layers;
    std::vector<DecoderLayerParams> decoder_layers;
    LayerNormParams enc_ln, dec_ln;
};

// Deterministic in (spec, seed): the same spec yields bitwise-identical
// parameters. Reservoir slots draw orthogonal projection weights whether or
// not they end up frozen, so freeze_reservoirs toggles only trainability.
Model build_model(const ModelSpec& spec);

std::vector<NamedParam> layer_params(const EncoderLayer& layer);
bool layer_frozen(const EncoderLayer& layer);
std::vector<NamedParam> model_params(const Model& m);
std::vector<NamedParam> trainable_params(const Model& m);

struct LayerCensus {
    std::string name;
    int64_t trainable = 0;
    int64_t total = 0;
    bool frozen = false;
};

struct ParamCensus {
    int64_t trainable = 0;
    int64_t total = 0;
    std::vector<LayerCensus> per_layer;
};

ParamCensus param_census(const Model& m);

// Encoder stack: embeddings + positions, each layer, final norm. The
// additive self-attention mask hides padded key positions. `drop`, when
// given, marks stack layers to skip (identity) for this forward.
Tensor encode(const Model& m, const TokenBatch& src, ForwardTrace* trace = nullptr,
              const std::vector<bool>* drop = nullptr);

// Decoder logits [B, T_tgt, model_vocab] given encoder memory. Causal self
// mask plus source padding mask for the cross attention.
Tensor decode_logits(const Model& m, const Tensor& memory, const TokenBatch& src,
                     const TokenBatch& tgt_in, const std::vector<bool>* drop = nullptr);

// Decoder-only language model logits [B, T, model_vocab].
Tensor lm_logits(const Model& m, const TokenBatch& ids, ForwardTrace* trace = nullptr,
                 const std::vector<bool>* drop = nullptr);

}  // namespace resformer

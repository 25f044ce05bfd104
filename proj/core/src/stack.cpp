#include "resformer/stack.hpp"

#include <cmath>

#include "resformer/errors.hpp"
#include "resformer/ops.hpp"

namespace resformer {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Transformer: return "transformer";
        case LayerKind::FfnReservoir: return "ffn_reservoir";
        case LayerKind::BiGruReservoir: return "bigru_reservoir";
        case LayerKind::ConvReservoir: return "conv_reservoir";
    }
    throw ConfigError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "transformer") return LayerKind::Transformer;
    if (s == "ffn_reservoir") return LayerKind::FfnReservoir;
    if (s == "bigru_reservoir") return LayerKind::BiGruReservoir;
    if (s == "conv_reservoir") return LayerKind::ConvReservoir;
    throw ConfigError("unknown layer kind '" + s + "'");
}

PlacementStrategy placement_from_name(const std::string& s) {
    if (s == "alternating_middle") return PlacementStrategy::AlternatingMiddle;
    if (s == "bottom") return PlacementStrategy::Bottom;
    if (s == "middle") return PlacementStrategy::Middle;
    if (s == "top") return PlacementStrategy::Top;
    throw ConfigError("unknown placement strategy '" + s + "'");
}

int64_t StackPattern::reservoir_count() const {
    int64_t n = 0;
    for (const auto& s : slots) n += s.frozen ? 1 : 0;
    return n;
}

std::string StackPattern::to_string() const {
    std::string out;
    out.reserve(slots.size());
    for (const auto& s : slots) {
        if (s.frozen) {
            out.push_back('R');
        } else {
            out.push_back(s.kind == LayerKind::Transformer ? 'L' : 'r');
        }
    }
    return out;
}

StackPattern StackPattern::parse(const std::string& s, LayerKind reservoir_kind) {
    if (s.empty()) throw ConfigError("stack pattern is empty");
    StackPattern p;
    p.slots.reserve(s.size());
    for (char c : s) {
        if (c == 'L') {
            p.slots.push_back({LayerKind::Transformer, false});
        } else if (c == 'R') {
            p.slots.push_back({reservoir_kind, true});
        } else {
            throw ConfigError(std::string("pattern characters must be 'L' or 'R', got '") + c +
                              "'");
        }
    }
    return p;
}

StackPattern place_reservoirs(int64_t n_total, int64_t n_reservoir, PlacementStrategy strategy,
                              LayerKind reservoir_kind) {
    if (n_total <= 0) throw ConfigError("stack needs at least one layer");
    if (n_reservoir < 0) throw ConfigError("reservoir count must be non-negative");
    if (n_reservoir >= n_total) {
        throw ConfigError("need at least one trainable readout layer: " +
                          std::to_string(n_reservoir) + " reservoirs in " +
                          std::to_string(n_total) + " slots");
    }
    std::vector<bool> frozen(static_cast<size_t>(n_total), false);
    const int64_t n = n_total, k = n_reservoir;
    switch (strategy) {
        case PlacementStrategy::AlternatingMiddle: {
            if (k > 0) {
                if (2 * k - 1 <= n) {
                    // centered R(LR)^(k-1)
                    const int64_t block = 2 * k - 1;
                    const int64_t start = (n - block) / 2;
                    for (int64_t i = 0; i < k; ++i) frozen[static_cast<size_t>(start + 2 * i)] = true;
                } else {
                    // too many for alternation: center L(RL)^(m-1) instead and
                    // pile the surplus R at the ends, smaller run on the left
                    const int64_t m = n - k;
                    const int64_t block = 2 * m - 1;
                    const int64_t extra = n - block;
                    const int64_t left = extra / 2;
                    for (int64_t i = 0; i < n; ++i) frozen[static_cast<size_t>(i)] = true;
                    for (int64_t i = 0; i < m; ++i) {
                        frozen[static_cast<size_t>(left + 2 * i)] = false;
                    }
                }
            }
            break;
        }
        case PlacementStrategy::Bottom:
            for (int64_t i = 0; i < k; ++i) frozen[static_cast<size_t>(i)] = true;
            break;
        case PlacementStrategy::Middle: {
            const int64_t start = (n - k) / 2;
            for (int64_t i = 0; i < k; ++i) frozen[static_cast<size_t>(start + i)] = true;
            break;
        }
        case PlacementStrategy::Top:
            for (int64_t i = 0; i < k; ++i) frozen[static_cast<size_t>(n - k + i)] = true;
            break;
    }
    StackPattern p;
    p.slots.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const bool f = frozen[static_cast<size_t>(i)];
        p.slots.push_back({f ? reservoir_kind : LayerKind::Transformer, f});
    }
    return p;
}

namespace {

Tensor make_positional(int64_t max_len, int64_t d) {
    std::vector<double> pe(static_cast<size_t>(max_len * d));
    for (int64_t p = 0; p < max_len; ++p) {
        for (int64_t i = 0; i < d; i += 2) {
            const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            pe[static_cast<size_t>(p * d + i)] = std::sin(static_cast<double>(p) * w);
            if (i + 1 < d) pe[static_cast<size_t>(p * d + i + 1)] = std::cos(static_cast<double>(p) * w);
        }
    }
    return Tensor::from_values({max_len, d}, std::move(pe));
}

EncoderLayer build_encoder_layer(const ModelSpec& spec, const Slot& slot, uint64_t seed) {
    switch (slot.kind) {
        case LayerKind::Transformer:
            return make_transformer_layer(spec.d_model, spec.heads, spec.ffn_width(), seed,
                                          slot.frozen);
        case LayerKind::FfnReservoir:
            return make_ffn_reservoir(spec.d_model, spec.ffn_width(), seed, slot.frozen);
        case LayerKind::BiGruReservoir:
            return make_bigru_reservoir(spec.d_model, seed, slot.frozen, spec.bigru_width_mult);
        case LayerKind::ConvReservoir:
            return make_conv_reservoir(spec.d_model, spec.conv_kernel_width, seed, slot.frozen);
    }
    throw ConfigError("unknown layer kind");
}

void set_layer_frozen(EncoderLayer& layer, bool frozen) {
    for (auto& np : layer_params(layer)) np.tensor.set_frozen(frozen);
    std::visit([frozen](auto& p) { p.frozen = frozen; }, layer);
}

void validate_spec(const ModelSpec& spec) {
    if (spec.vocab_size <= 0) throw ConfigError("vocab_size must be positive");
    if (spec.d_model <= 0) throw ConfigError("d_model must be positive");
    if (spec.heads <= 0 || spec.d_model % spec.heads != 0) {
        throw ConfigError("model width " + std::to_string(spec.d_model) + " not divisible by " +
                          std::to_string(spec.heads) + " heads");
    }
    if (spec.encoder.slots.empty()) throw ConfigError("stack pattern is empty");
    bool any_trainable = false;
    for (const auto& s : spec.encoder.slots) any_trainable = any_trainable || !s.frozen;
    if (!any_trainable && spec.freeze_reservoirs) {
        throw ConfigError("stack pattern has no trainable slot");
    }
    if (spec.arch == ModelArch::Seq2Seq) {
        if (spec.decoder.slots.empty()) throw ConfigError("decoder pattern is empty");
        for (const auto& s : spec.decoder.slots) {
            if (s.frozen || s.kind != LayerKind::Transformer) {
                throw ConfigError("decoder slots must be trainable transformer layers");
            }
        }
    }
}

}  // namespace

Model build_model(const ModelSpec& spec) {
    validate_spec(spec);
    Model m;
    m.spec = spec;
    const int64_t d = spec.d_model;
    const int64_t v = spec.model_vocab();

    m.src_embed = init_param(ParamRole::Projection, {v, d}, mix_seed(spec.seed, 1), false);
    if (spec.arch == ModelArch::Seq2Seq) {
        m.tgt_embed = init_param(ParamRole::Projection, {v, d}, mix_seed(spec.seed, 2), false);
    }
    m.out_w = init_param(ParamRole::Projection, {d, v}, mix_seed(spec.seed, 3), false);
    m.out_b = init_param(ParamRole::Bias, {v}, 0, false);
    m.pos = make_positional(spec.max_len, d);
    m.enc_ln = {init_param(ParamRole::Gain, {d}, 0, false),
                init_param(ParamRole::Shift, {d}, 0, false)};
    if (spec.arch == ModelArch::Seq2Seq) {
        m.dec_ln = {init_param(ParamRole::Gain, {d}, 0, false),
                    init_param(ParamRole::Shift, {d}, 0, false)};
    }

    for (size_t i = 0; i < spec.encoder.slots.size(); ++i) {
        const Slot& slot = spec.encoder.slots[i];
        EncoderLayer layer =
            build_encoder_layer(spec, slot, mix_seed(spec.seed, 100 + static_cast<uint64_t>(i)));
        if (slot.frozen && !spec.freeze_reservoirs) set_layer_frozen(layer, false);
        m.encoder_layers.push_back(std::move(layer));
    }
    if (spec.arch == ModelArch::Seq2Seq) {
        for (size_t j = 0; j < spec.decoder.slots.size(); ++j) {
            m.decoder_layers.push_back(make_decoder_layer(
                d, spec.heads, spec.ffn_width(), mix_seed(spec.seed, 200 + static_cast<uint64_t>(j)),
                false));
        }
    }
    return m;
}

std::vector<NamedParam> layer_params(const EncoderLayer& layer) {
    return std::visit([](const auto& p) { return p.params(); }, layer);
}

bool layer_frozen(const EncoderLayer& layer) {
    return std::visit([](const auto& p) { return p.frozen; }, layer);
}

std::vector<NamedParam> model_params(const Model& m) {
    std::vector<NamedParam> out;
    out.push_back({"src_embed", m.src_embed});
    if (m.tgt_embed.defined()) out.push_back({"tgt_embed", m.tgt_embed});
    out.push_back({"out.w", m.out_w});
    out.push_back({"out.b", m.out_b});
    out.push_back({"enc_ln.gamma", m.enc_ln.gamma});
    out.push_back({"enc_ln.beta", m.enc_ln.beta});
    if (m.dec_ln.gamma.defined()) {
        out.push_back({"dec_ln.gamma", m.dec_ln.gamma});
        out.push_back({"dec_ln.beta", m.dec_ln.beta});
    }
    for (size_t i = 0; i < m.encoder_layers.size(); ++i) {
        const std::string prefix = "enc" + std::to_string(i) + ".";
        for (auto& np : layer_params(m.encoder_layers[i])) {
            out.push_back({prefix + np.name, np.tensor});
        }
    }
    for (size_t j = 0; j < m.decoder_layers.size(); ++j) {
        const std::string prefix = "dec" + std::to_string(j) + ".";
        for (auto& np : m.decoder_layers[j].params()) {
            out.push_back({prefix + np.name, np.tensor});
        }
    }
    return out;
}

std::vector<NamedParam> trainable_params(const Model& m) {
    std::vector<NamedParam> out;
    for (auto& np : model_params(m)) {
        if (!np.tensor.frozen()) out.push_back(np);
    }
    return out;
}

ParamCensus param_census(const Model& m) {
    ParamCensus c;
    for (size_t i = 0; i < m.encoder_layers.size(); ++i) {
        LayerCensus lc;
        lc.frozen = layer_frozen(m.encoder_layers[i]);
        lc.name = "enc" + std::to_string(i) + "." + layer_kind_name(m.spec.encoder.slots[i].kind);
        for (const auto& np : layer_params(m.encoder_layers[i])) {
            const int64_t n = np.tensor.numel();
            lc.total += n;
            if (!np.tensor.frozen()) lc.trainable += n;
        }
        c.per_layer.push_back(lc);
    }
    for (size_t j = 0; j < m.decoder_layers.size(); ++j) {
        LayerCensus lc;
        lc.frozen = false;
        lc.name = "dec" + std::to_string(j) + ".transformer";
        for (const auto& np : m.decoder_layers[j].params()) {
            lc.total += np.tensor.numel();
            lc.trainable += np.tensor.numel();
        }
        c.per_layer.push_back(lc);
    }
    for (const auto& np : model_params(m)) {
        const int64_t n = np.tensor.numel();
        c.total += n;
        if (!np.tensor.frozen()) c.trainable += n;
    }
    return c;
}

namespace {

Tensor embed_tokens(const Tensor& table, const Tensor& pos, const TokenBatch& b, int64_t d) {
    if (b.time > pos.dim(0)) {
        throw ShapeError("sequence length " + std::to_string(b.time) +
                         " exceeds positional table " + std::to_string(pos.dim(0)));
    }
    Tensor x = scale(embedding_lookup(table, b.ids, {b.batch, b.time}),
                     std::sqrt(static_cast<double>(d)));
    return add(x, slice(pos, 0, 0, b.time));
}

// [B, T, T]; key positions holding pad get -1e9.
Tensor key_padding_mask(const TokenBatch& b, int64_t pad_id, bool causal) {
    std::vector<double> m(static_cast<size_t>(b.batch * b.time * b.time), 0.0);
    for (int64_t bi = 0; bi < b.batch; ++bi) {
        for (int64_t q = 0; q < b.time; ++q) {
            for (int64_t k = 0; k < b.time; ++k) {
                const bool blocked = (causal && k > q) || b.at(bi, k) == pad_id;
                if (blocked) {
                    m[static_cast<size_t>((bi * b.time + q) * b.time + k)] = -1e9;
                }
            }
        }
    }
    return Tensor::from_values({b.batch, b.time, b.time}, std::move(m));
}

// [B, T_tgt, T_src]; padded source keys get -1e9.
Tensor cross_padding_mask(const TokenBatch& tgt, const TokenBatch& src, int64_t pad_id) {
    std::vector<double> m(static_cast<size_t>(tgt.batch * tgt.time * src.time), 0.0);
    for (int64_t bi = 0; bi < tgt.batch; ++bi) {
        for (int64_t q = 0; q < tgt.time; ++q) {
            for (int64_t k = 0; k < src.time; ++k) {
                if (src.at(bi, k) == pad_id) {
                    m[static_cast<size_t>((bi * tgt.time + q) * src.time + k)] = -1e9;
                }
            }
        }
    }
    return Tensor::from_values({tgt.batch, tgt.time, src.time}, std::move(m));
}

Tensor run_stack(const Model& m, Tensor x, const Tensor& mask, ForwardTrace* trace,
                 const std::vector<bool>* drop) {
    if (drop && drop->size() != m.encoder_layers.size()) {
        throw ShapeError("drop mask size does not match layer count");
    }
    for (size_t li = 0; li < m.encoder_layers.size(); ++li) {
        const auto& layer = m.encoder_layers[li];
        if (drop && (*drop)[li]) {
            if (trace) trace->layer_outputs.push_back(x);
            continue;
        }
        x = std::visit(
            [&](const auto& p) -> Tensor {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, TransformerLayerParams>) {
                    return transformer_layer_forward(x, p, mask);
                } else if constexpr (std::is_same_v<P, FfnReservoirParams>) {
                    return ffn_reservoir_forward(x, p);
                } else if constexpr (std::is_same_v<P, BiGruParams>) {
                    return bigru_forward(x, p);
                } else {
                    return conv_reservoir_forward(x, p);
                }
            },
            layer);
        if (trace) trace->layer_outputs.push_back(x);
    }
    x = apply_layer_norm(x, m.enc_ln);
    if (trace) trace->final_output = x;
    return x;
}

}  // namespace

Tensor encode(const Model& m, const TokenBatch& src, ForwardTrace* trace,
              const std::vector<bool>* drop) {
    if (m.spec.arch != ModelArch::Seq2Seq) throw ConfigError("encode requires a seq2seq model");
    Tensor x = embed_tokens(m.src_embed, m.pos, src, m.spec.d_model);
    if (trace) trace->input_embedding = x;
    Tensor mask = key_padding_mask(src, m.spec.pad_id(), false);
    return run_stack(m, std::move(x), mask, trace, drop);
}

Tensor decode_logits(const Model& m, const Tensor& memory, const TokenBatch& src,
                     const TokenBatch& tgt_in, const std::vector<bool>* drop) {
    if (m.spec.arch != ModelArch::Seq2Seq) throw ConfigError("decode requires a seq2seq model");
    if (drop && drop->size() != m.decoder_layers.size()) {
        throw ShapeError("drop mask size does not match layer count");
    }
    Tensor y = embed_tokens(m.tgt_embed, m.pos, tgt_in, m.spec.d_model);
    Tensor self_mask = key_padding_mask(tgt_in, m.spec.pad_id(), true);
    Tensor cross_mask = cross_padding_mask(tgt_in, src, m.spec.pad_id());
    for (size_t j = 0; j < m.decoder_layers.size(); ++j) {
        if (drop && (*drop)[j]) continue;
        y = decoder_layer_forward(y, memory, m.decoder_layers[j], self_mask, cross_mask);
    }
    y = apply_layer_norm(y, m.dec_ln);
    return linear(y, m.out_w, m.out_b);
}

Tensor lm_logits(const Model& m, const TokenBatch& ids, ForwardTrace* trace,
                 const std::vector<bool>* drop) {
    if (m.spec.arch != ModelArch::Lm) throw ConfigError("lm_logits requires an LM model");
    Tensor x = embed_tokens(m.src_embed, m.pos, ids, m.spec.d_model);
    if (trace) trace->input_embedding = x;
    Tensor mask = key_padding_mask(ids, m.spec.pad_id(), true);
    Tensor h = run_stack(m, std::move(x), mask, trace, drop);
    return linear(h, m.out_w, m.out_b);
}

}  // namespace resformer

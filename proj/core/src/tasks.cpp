#include "resformer/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "resformer/errors.hpp"
#include "resformer/init.hpp"

namespace resformer {

TaskKind task_from_name(const std::string& s) {
    if (s == "copy") return TaskKind::Copy;
    if (s == "reverse") return TaskKind::Reverse;
    if (s == "sort") return TaskKind::Sort;
    throw ConfigError("unknown task '" + s + "'");
}

std::string task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Copy: return "copy";
        case TaskKind::Reverse: return "reverse";
        case TaskKind::Sort: return "sort";
    }
    throw ConfigError("unknown task");
}

namespace {

std::vector<Seq2SeqPair> generate_split(const SyntheticSeq2SeqSpec& spec, int64_t count,
                                        uint64_t stream) {
    Rng rng(mix_seed(spec.seed, stream));
    std::vector<Seq2SeqPair> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const int64_t len = rng.uniform_int(spec.length_min, spec.length_max);
        Seq2SeqPair p;
        p.source.reserve(static_cast<size_t>(len));
        for (int64_t j = 0; j < len; ++j) p.source.push_back(rng.uniform_int(0, spec.vocab_size - 1));
        p.target = p.source;
        switch (spec.task) {
            case TaskKind::Copy: break;
            case TaskKind::Reverse: std::reverse(p.target.begin(), p.target.end()); break;
            case TaskKind::Sort: std::sort(p.target.begin(), p.target.end()); break;
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

Seq2SeqDataset generate_seq2seq(const SyntheticSeq2SeqSpec& spec) {
    if (spec.vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (spec.length_min < 1 || spec.length_min > spec.length_max) {
        throw ConfigError("invalid length range [" + std::to_string(spec.length_min) + ", " +
                          std::to_string(spec.length_max) + "]");
    }
    Seq2SeqDataset d;
    d.train = generate_split(spec, spec.train_size, 0);
    d.val = generate_split(spec, spec.val_size, 1);
    d.test = generate_split(spec, spec.test_size, 2);
    return d;
}

void save_pairs(const std::string& path, const std::vector<Seq2SeqPair>& pairs) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    for (const auto& p : pairs) {
        for (size_t i = 0; i < p.source.size(); ++i) {
            if (i) f << ' ';
            f << p.source[i];
        }
        f << '\t';
        for (size_t i = 0; i < p.target.size(); ++i) {
            if (i) f << ' ';
            f << p.target[i];
        }
        f << '\n';
    }
}

std::vector<Seq2SeqPair> load_pairs(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for reading");
    std::vector<Seq2SeqPair> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ConfigError("malformed pair line: '" + line + "'");
        Seq2SeqPair p;
        auto parse_ints = [](const std::string& s, std::vector<int64_t>& dst) {
            std::istringstream in(s);
            int64_t v;
            while (in >> v) dst.push_back(v);
        };
        parse_ints(line.substr(0, tab), p.source);
        parse_ints(line.substr(tab + 1), p.target);
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

// n-gram -> count, keyed by the token window itself
std::map<std::vector<int64_t>, int64_t> ngram_counts(const std::vector<int64_t>& toks, int n) {
    std::map<std::vector<int64_t>, int64_t> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
        std::vector<int64_t> key(toks.begin() + static_cast<int64_t>(i),
                                 toks.begin() + static_cast<int64_t>(i) + n);
        ++counts[key];
    }
    return counts;
}

}  // namespace

double bleu(const std::vector<std::vector<int64_t>>& hypotheses,
            const std::vector<std::vector<int64_t>>& references, int max_n) {
    if (hypotheses.size() != references.size()) {
        throw ConfigError("hypothesis/reference counts differ: " +
                          std::to_string(hypotheses.size()) + " vs " +
                          std::to_string(references.size()));
    }
    if (hypotheses.empty()) throw ConfigError("BLEU of an empty corpus");
    if (max_n < 1) throw ConfigError("max_n must be >= 1");

    std::vector<double> num(static_cast<size_t>(max_n), 0.0);
    std::vector<double> den(static_cast<size_t>(max_n), 0.0);
    int64_t hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& h = hypotheses[i];
        const auto& r = references[i];
        hyp_len += static_cast<int64_t>(h.size());
        ref_len += static_cast<int64_t>(r.size());
        for (int n = 1; n <= max_n; ++n) {
            const auto hc = ngram_counts(h, n);
            const auto rc = ngram_counts(r, n);
            for (const auto& [key, count] : hc) {
                const auto it = rc.find(key);
                const int64_t clip = it == rc.end() ? 0 : std::min(count, it->second);
                num[static_cast<size_t>(n - 1)] += static_cast<double>(clip);
                den[static_cast<size_t>(n - 1)] += static_cast<double>(count);
            }
        }
    }
    if (hyp_len == 0 || num[0] == 0.0) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const double smooth = n >= 2 ? 1.0 : 0.0;
        const double p = (num[static_cast<size_t>(n - 1)] + smooth) /
                         (den[static_cast<size_t>(n - 1)] + smooth);
        log_sum += std::log(p) / static_cast<double>(max_n);
    }
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_sum);
}

std::vector<int64_t> CharLmCorpus::train() const {
    return {ids.begin(), ids.begin() + train_end};
}
std::vector<int64_t> CharLmCorpus::val() const {
    return {ids.begin() + train_end, ids.begin() + val_end};
}
std::vector<int64_t> CharLmCorpus::test() const { return {ids.begin() + val_end, ids.end()}; }

CharLmCorpus make_char_corpus(const std::string& text, double train_frac, double val_frac) {
    if (text.empty()) throw ConfigError("empty corpus text");
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac >= 1.0) {
        throw ConfigError("invalid corpus split fractions");
    }
    CharLmCorpus c;
    std::map<unsigned char, int64_t> to_id;
    for (char ch : text) {
        const auto b = static_cast<unsigned char>(ch);
        if (to_id.find(b) == to_id.end()) {
            to_id[b] = static_cast<int64_t>(c.alphabet.size());
            c.alphabet.push_back(b);
        }
    }
    c.ids.reserve(text.size());
    for (char ch : text) c.ids.push_back(to_id[static_cast<unsigned char>(ch)]);
    const auto n = static_cast<int64_t>(c.ids.size());
    c.train_end = static_cast<int64_t>(static_cast<double>(n) * train_frac);
    c.val_end = c.train_end + static_cast<int64_t>(static_cast<double>(n) * val_frac);
    c.train_end = std::max<int64_t>(1, std::min(c.train_end, n - 2));
    c.val_end = std::max(c.train_end + 1, std::min(c.val_end, n - 1));
    return c;
}

std::string synthetic_char_text(int64_t length, uint64_t seed) {
    if (length <= 0) throw ConfigError("corpus length must be positive");
    static const std::string vowels = "aeiou";
    static const std::string consonants = "bcdfghjklmnprstvwz";
    Rng rng(seed);
    std::string out;
    out.reserve(static_cast<size_t>(length));
    int64_t words_left = 0;
    while (static_cast<int64_t>(out.size()) < length) {
        if (words_left == 0) {
            words_left = rng.uniform_int(4, 12);
        }
        const int64_t word_len = rng.uniform_int(2, 8);
        bool consonant = rng.bernoulli(0.7);
        for (int64_t i = 0; i < word_len; ++i) {
            const auto& pool = consonant ? consonants : vowels;
            out.push_back(pool[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
            consonant = !consonant;
        }
        if (--words_left == 0) {
            out.push_back('.');
            out.push_back(rng.bernoulli(0.2) ? '\n' : ' ');
        } else {
            out.push_back(rng.bernoulli(0.05) ? ',' : ' ');
            if (out.back() == ',') out.push_back(' ');
        }
    }
    out.resize(static_cast<size_t>(length));
    return out;
}

double bits_per_character(const CharPredictor& predict, const std::vector<int64_t>& stream,
                          int64_t vocab) {
    if (stream.empty()) throw ConfigError("BPC of an empty stream");
    double bits = 0.0;
    std::vector<int64_t> context;
    for (size_t i = 0; i < stream.size(); ++i) {
        const auto probs = predict(context);
        if (static_cast<int64_t>(probs.size()) != vocab) {
            throw ShapeError("predictor returned " + std::to_string(probs.size()) +
                             " probabilities for vocab " + std::to_string(vocab));
        }
        const int64_t c = stream[i];
        if (c < 0 || c >= vocab) {
            throw ConfigError("stream symbol " + std::to_string(c) + " outside vocab " +
                              std::to_string(vocab));
        }
        const double p = probs[static_cast<size_t>(c)];
        if (p <= 0.0) throw NumericError("zero probability assigned to an observed symbol");
        bits -= std::log2(p);
        context.push_back(c);
    }
    return bits / static_cast<double>(stream.size());
}

double bits_per_character(const Model& m, const std::vector<int64_t>& stream,
                          int64_t context_len) {
    if (m.spec.arch != ModelArch::Lm) throw ConfigError("BPC adapter requires an LM model");
    if (stream.empty()) throw ConfigError("BPC of an empty stream");
    if (context_len < 1) throw ConfigError("context_len must be >= 1");
    NoGradGuard no_grad;
    const int64_t n = static_cast<int64_t>(stream.size());
    double bits = 0.0;
    for (int64_t begin = 0; begin < n; begin += context_len) {
        const int64_t w = std::min(context_len, n - begin);
        TokenBatch in;
        in.batch = 1;
        in.time = w;
        in.ids.push_back(m.spec.bos_id());
        for (int64_t i = 0; i + 1 < w; ++i) in.ids.push_back(stream[static_cast<size_t>(begin + i)]);
        Tensor logits = lm_logits(m, in);  // [1, w, V]
        const auto& lv = logits.values();
        const int64_t v = m.spec.model_vocab();
        for (int64_t t = 0; t < w; ++t) {
            const double* row = lv.data() + t * v;
            double mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
            const double lse = mx + std::log(denom);
            const int64_t c = stream[static_cast<size_t>(begin + t)];
            bits -= (row[c] - lse) / std::log(2.0);
        }
    }
    return bits / static_cast<double>(n);
}

Seq2SeqBatch make_batch(const std::vector<Seq2SeqPair>& pairs, size_t begin, size_t count,
                        int64_t pad_id, int64_t bos_id, int64_t eos_id) {
    if (count == 0 || begin + count > pairs.size()) {
        throw ConfigError("batch range out of bounds");
    }
    int64_t max_src = 0, max_tgt = 0;
    for (size_t i = begin; i < begin + count; ++i) {
        max_src = std::max(max_src, static_cast<int64_t>(pairs[i].source.size()));
        max_tgt = std::max(max_tgt, static_cast<int64_t>(pairs[i].target.size()));
    }
    const int64_t tgt_time = max_tgt + 1;  // room for BOS on input, EOS on output

    Seq2SeqBatch b;
    b.src.batch = static_cast<int64_t>(count);
    b.src.time = max_src;
    b.src.ids.assign(count * static_cast<size_t>(max_src), pad_id);
    b.tgt_in.batch = static_cast<int64_t>(count);
    b.tgt_in.time = tgt_time;
    b.tgt_in.ids.assign(count * static_cast<size_t>(tgt_time), pad_id);
    b.tgt_out.assign(count * static_cast<size_t>(tgt_time), pad_id);
    b.tgt_weight.assign(count * static_cast<size_t>(tgt_time), 0.0);

    for (size_t i = 0; i < count; ++i) {
        const auto& p = pairs[begin + i];
        for (size_t j = 0; j < p.source.size(); ++j) {
            b.src.ids[i * static_cast<size_t>(max_src) + j] = p.source[j];
        }
        b.tgt_in.ids[i * static_cast<size_t>(tgt_time)] = bos_id;
        for (size_t j = 0; j < p.target.size(); ++j) {
            b.tgt_in.ids[i * static_cast<size_t>(tgt_time) + j + 1] = p.target[j];
            b.tgt_out[i * static_cast<size_t>(tgt_time) + j] = p.target[j];
            b.tgt_weight[i * static_cast<size_t>(tgt_time) + j] = 1.0;
        }
        b.tgt_out[i * static_cast<size_t>(tgt_time) + p.target.size()] = eos_id;
        b.tgt_weight[i * static_cast<size_t>(tgt_time) + p.target.size()] = 1.0;
    }
    return b;
}

Batcher::Batcher(std::vector<Seq2SeqPair> pairs, int64_t batch_size, int64_t pad_id,
                 int64_t bos_id, int64_t eos_id, uint64_t seed, bool shuffle)
    : pairs_(std::move(pairs)),
      batch_size_(batch_size),
      pad_id_(pad_id),
      bos_id_(bos_id),
      eos_id_(eos_id),
      seed_(seed),
      shuffle_(shuffle) {
    if (pairs_.empty()) throw ConfigError("batcher over an empty dataset");
    if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
    order_.resize(pairs_.size());
    start_epoch();
}

int64_t Batcher::batches_per_epoch() const {
    return (static_cast<int64_t>(pairs_.size()) + batch_size_ - 1) / batch_size_;
}

void Batcher::start_epoch() {
    ++epoch_;
    cursor_ = 0;
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_) {
        Rng rng(mix_seed(seed_, static_cast<uint64_t>(epoch_)));
        for (size_t i = order_.size(); i > 1; --i) {
            const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order_[i - 1], order_[j]);
        }
    }
}

Seq2SeqBatch Batcher::next() {
    if (cursor_ >= order_.size()) start_epoch();
    const size_t count = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
    std::vector<Seq2SeqPair> chunk;
    chunk.reserve(count);
    for (size_t i = 0; i < count; ++i) chunk.push_back(pairs_[order_[cursor_ + i]]);
    cursor_ += count;
    return make_batch(chunk, 0, count, pad_id_, bos_id_, eos_id_);
}

}  // namespace resformer

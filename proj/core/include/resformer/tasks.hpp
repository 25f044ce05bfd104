#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resformer/stack.hpp"

namespace resformer {

enum class TaskKind { Copy, Reverse, Sort };

TaskKind task_from_name(const std::string& s);
std::string task_name(TaskKind t);

struct SyntheticSeq2SeqSpec {
    TaskKind task = TaskKind::Copy;
    int64_t vocab_size = 0;
    int64_t length_min = 1;
    int64_t length_max = 1;
    int64_t train_size = 0;
    int64_t val_size = 0;
    int64_t test_size = 0;
    uint64_t seed = 0;
};

struct Seq2SeqPair {
    std::vector<int64_t> source, target;
};

struct Seq2SeqDataset {
    std::vector<Seq2SeqPair> train, val, test;
};

// Deterministic in (spec, seed); each split draws from its own stream, so
// resizing one split never changes another.
Seq2SeqDataset generate_seq2seq(const SyntheticSeq2SeqSpec& spec);

// One `source<TAB>target` line per pair, space-separated token ids.
void save_pairs(const std::string& path, const std::vector<Seq2SeqPair>& pairs);
std::vector<Seq2SeqPair> load_pairs(const std::string& path);

// Corpus-level BLEU in [0, 100]: clipped n-gram precisions up to max_n with
// +1 smoothing on orders >= 2, times the brevity penalty.
double bleu(const std::vector<std::vector<int64_t>>& hypotheses,
            const std::vector<std::vector<int64_t>>& references, int max_n = 4);

struct CharLmCorpus {
    std::vector<int64_t> ids;                // contiguous stream, remapped ids
    std::vector<unsigned char> alphabet;     // id -> byte
    int64_t train_end = 0, val_end = 0;      // split boundaries into ids

    int64_t vocab_size() const { return static_cast<int64_t>(alphabet.size()); }
    std::vector<int64_t> train() const;
    std::vector<int64_t> val() const;
    std::vector<int64_t> test() const;
};

CharLmCorpus make_char_corpus(const std::string& text, double train_frac = 0.9,
                              double val_frac = 0.05);

// Pseudo-natural word/sentence stream, deterministic in seed. Stands in for
// a real text corpus so LM experiments need no external data.
std::string synthetic_char_text(int64_t length, uint64_t seed);

// predict(context) returns p(next symbol | context) over the vocab.
using CharPredictor = std::function<std::vector<double>(const std::vector<int64_t>& context)>;

// Mean over stream positions of -log2 p(char | context). The first symbol
// is conditioned on the empty context.
double bits_per_character(const CharPredictor& predict, const std::vector<int64_t>& stream,
                          int64_t vocab);

// LM-model adapter: scores the stream in windows of context_len tokens,
// each window prefixed with BOS.
double bits_per_character(const Model& m, const std::vector<int64_t>& stream,
                          int64_t context_len);

struct Seq2SeqBatch {
    TokenBatch src;                   // padded sources
    TokenBatch tgt_in;                // BOS + target, padded
    std::vector<int64_t> tgt_out;     // target + EOS, flattened [B * T]
    std::vector<double> tgt_weight;   // 1 on real positions, 0 on padding
};

Seq2SeqBatch make_batch(const std::vector<Seq2SeqPair>& pairs, size_t begin, size_t count,
                        int64_t pad_id, int64_t bos_id, int64_t eos_id);

// Deterministic batch stream: shuffles once per epoch from a per-epoch seed
// stream, pads within each batch.
class Batcher {
  public:
    Batcher(std::vector<Seq2SeqPair> pairs, int64_t batch_size, int64_t pad_id, int64_t bos_id,
            int64_t eos_id, uint64_t seed, bool shuffle = true);

    Seq2SeqBatch next();
    int64_t batches_per_epoch() const;
    int64_t epoch() const { return epoch_; }

  private:
    void start_epoch();

    std::vector<Seq2SeqPair> pairs_;
    std::vector<size_t> order_;
    int64_t batch_size_;
    int64_t pad_id_, bos_id_, eos_id_;
    uint64_t seed_;
    bool shuffle_;
    int64_t epoch_ = -1;
    size_t cursor_ = 0;
};

}  // namespace resformer

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "resformer/errors.hpp"
#include "resformer/init.hpp"
#include "resformer/tasks.hpp"

using namespace resformer;

namespace {

// Independent corpus BLEU used as the oracle: plain nested scans and map
// counting, no shared code with the library implementation.
double oracle_bleu(const std::vector<std::vector<int64_t>>& hyps,
                   const std::vector<std::vector<int64_t>>& refs, int max_n = 4) {
    double hyp_len = 0, ref_len = 0;
    std::vector<double> matches(static_cast<size_t>(max_n), 0.0);
    std::vector<double> totals(static_cast<size_t>(max_n), 0.0);
    for (size_t i = 0; i < hyps.size(); ++i) {
        const auto& h = hyps[i];
        const auto& r = refs[i];
        hyp_len += static_cast<double>(h.size());
        ref_len += static_cast<double>(r.size());
        for (int n = 1; n <= max_n; ++n) {
            std::map<std::vector<int64_t>, int64_t> hc, rc;
            for (size_t s = 0; s + n <= h.size(); ++s) {
                ++hc[std::vector<int64_t>(h.begin() + s, h.begin() + s + n)];
            }
            for (size_t s = 0; s + n <= r.size(); ++s) {
                ++rc[std::vector<int64_t>(r.begin() + s, r.begin() + s + n)];
            }
            for (const auto& [gram, count] : hc) {
                auto it = rc.find(gram);
                if (it != rc.end()) {
                    matches[static_cast<size_t>(n - 1)] +=
                        static_cast<double>(std::min(count, it->second));
                }
                totals[static_cast<size_t>(n - 1)] += static_cast<double>(count);
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    double log_sum = 0;
    for (int n = 1; n <= max_n; ++n) {
        double num = matches[static_cast<size_t>(n - 1)];
        double den = totals[static_cast<size_t>(n - 1)];
        if (n >= 2) {
            num += 1.0;
            den += 1.0;
        }
        if (num == 0.0 || den == 0.0) return 0.0;
        log_sum += std::log(num / den);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return 100.0 * bp * std::exp(log_sum / max_n);
}

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("task generation is deterministic and respects the requested shape") {
    SyntheticSeq2SeqSpec spec;
    spec.task = TaskKind::Copy;
    spec.vocab_size = 10;
    spec.length_min = 2;
    spec.length_max = 6;
    spec.train_size = 50;
    spec.val_size = 10;
    spec.test_size = 10;
    spec.seed = 77;

    auto a = generate_seq2seq(spec);
    auto b = generate_seq2seq(spec);
    CHECK(a.train.size() == 50);
    CHECK(a.val.size() == 10);
    CHECK(a.test.size() == 10);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].source == b.train[i].source);
        CHECK(a.train[i].target == b.train[i].target);
    }

    for (const auto& p : a.train) {
        CHECK(p.source.size() >= 2);
        CHECK(p.source.size() <= 6);
        for (auto t : p.source) {
            CHECK(t >= 0);
            CHECK(t < 10);
        }
        CHECK(p.target == p.source);
    }
}

TEST_CASE("splits draw from independent streams") {
    SyntheticSeq2SeqSpec spec;
    spec.task = TaskKind::Copy;
    spec.vocab_size = 10;
    spec.length_min = 3;
    spec.length_max = 5;
    spec.train_size = 20;
    spec.val_size = 8;
    spec.test_size = 8;
    spec.seed = 5;

    auto small = generate_seq2seq(spec);
    spec.train_size = 40;  // growing train must not disturb val/test
    auto big = generate_seq2seq(spec);
    REQUIRE(small.val.size() == big.val.size());
    for (size_t i = 0; i < small.val.size(); ++i) {
        CHECK(small.val[i].source == big.val[i].source);
    }
    for (size_t i = 0; i < small.test.size(); ++i) {
        CHECK(small.test[i].source == big.test[i].source);
    }
}

TEST_CASE("reverse and sort targets") {
    SyntheticSeq2SeqSpec spec;
    spec.vocab_size = 12;
    spec.length_min = 1;
    spec.length_max = 7;
    spec.train_size = 30;
    spec.val_size = 1;
    spec.test_size = 1;
    spec.seed = 3;

    spec.task = TaskKind::Reverse;
    for (const auto& p : generate_seq2seq(spec).train) {
        auto want = p.source;
        std::reverse(want.begin(), want.end());
        CHECK(p.target == want);
    }

    spec.task = TaskKind::Sort;
    for (const auto& p : generate_seq2seq(spec).train) {
        auto want = p.source;
        std::sort(want.begin(), want.end());
        CHECK(p.target == want);
    }
}

TEST_CASE("generation validates its spec") {
    SyntheticSeq2SeqSpec spec;
    spec.vocab_size = 1;
    spec.length_min = 1;
    spec.length_max = 2;
    spec.train_size = 1;
    CHECK_THROWS_AS(generate_seq2seq(spec), ConfigError);

    spec.vocab_size = 5;
    spec.length_min = 4;
    spec.length_max = 2;
    CHECK_THROWS_AS(generate_seq2seq(spec), ConfigError);

    spec.length_min = 0;
    spec.length_max = 2;
    CHECK_THROWS_AS(generate_seq2seq(spec), ConfigError);
}

TEST_CASE("pairs round trip through disk") {
    std::vector<Seq2SeqPair> pairs = {{{1, 2, 3}, {3, 2, 1}}, {{7}, {7}}, {{0, 0}, {0, 0}}};
    auto path = temp_path("resformer_pairs_test.tsv");
    save_pairs(path, pairs);
    auto loaded = load_pairs(path);
    REQUIRE(loaded.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(loaded[i].source == pairs[i].source);
        CHECK(loaded[i].target == pairs[i].target);
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_pairs(path), ConfigError);
}

TEST_CASE("bleu endpoints") {
    std::vector<std::vector<int64_t>> ref = {{1, 2, 3, 4, 5}};
    CHECK(bleu(ref, ref) == doctest::Approx(100.0).epsilon(1e-12));

    std::vector<std::vector<int64_t>> miss = {{6, 7, 8, 9, 10}};
    CHECK(bleu(miss, ref) == doctest::Approx(0.0));

    std::vector<std::vector<int64_t>> empty_hyp = {{}};
    CHECK(bleu(empty_hyp, ref) == doctest::Approx(0.0));

    CHECK_THROWS_AS(bleu({}, {}), ConfigError);
    CHECK_THROWS_AS(bleu({{1}}, {{1}, {2}}), ConfigError);
    CHECK_THROWS_AS(bleu(ref, ref, 0), ConfigError);
}

TEST_CASE("bleu matches the oracle on hand cases") {
    // Shorter hypothesis triggers the brevity penalty.
    std::vector<std::vector<int64_t>> hyp = {{1, 2, 3}};
    std::vector<std::vector<int64_t>> ref = {{1, 2, 3, 4}};
    CHECK(bleu(hyp, ref) == doctest::Approx(oracle_bleu(hyp, ref)).epsilon(1e-12));

    // Clipping: repeated token counted at most as often as the reference has it.
    std::vector<std::vector<int64_t>> hyp2 = {{5, 5, 5, 5}};
    std::vector<std::vector<int64_t>> ref2 = {{5, 2, 5, 9}};
    CHECK(bleu(hyp2, ref2) == doctest::Approx(oracle_bleu(hyp2, ref2)).epsilon(1e-12));

    // Multi-sentence corpus aggregates counts before the ratio.
    std::vector<std::vector<int64_t>> hyp3 = {{1, 2, 3, 4}, {9, 8, 7}};
    std::vector<std::vector<int64_t>> ref3 = {{1, 2, 3, 5}, {9, 8, 7, 6}};
    CHECK(bleu(hyp3, ref3) == doctest::Approx(oracle_bleu(hyp3, ref3)).epsilon(1e-12));
}

TEST_CASE("bleu matches the oracle on random corpora") {
    Rng rng(404);
    for (int trial = 0; trial < 60; ++trial) {
        const int sentences = 1 + static_cast<int>(rng.uniform_int(0, 3));
        std::vector<std::vector<int64_t>> hyp, ref;
        for (int s = 0; s < sentences; ++s) {
            const int hl = static_cast<int>(rng.uniform_int(1, 12));
            const int rl = static_cast<int>(rng.uniform_int(1, 12));
            std::vector<int64_t> h, r;
            for (int i = 0; i < hl; ++i) h.push_back(rng.uniform_int(0, 5));
            for (int i = 0; i < rl; ++i) r.push_back(rng.uniform_int(0, 5));
            hyp.push_back(h);
            ref.push_back(r);
        }
        const double got = bleu(hyp, ref);
        const double want = oracle_bleu(hyp, ref);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("char corpus remaps bytes and splits by fraction") {
    std::string text = "abcabcXYZ";
    auto corpus = make_char_corpus(text, 0.5, 0.25);
    CHECK(corpus.ids.size() == text.size());
    CHECK(corpus.vocab_size() == 6);  // a b c X Y Z
    CHECK(corpus.train_end == 4);     // floor(9 * 0.5) with a minimum of 1
    // Round trip: ids map back to the original bytes.
    for (size_t i = 0; i < text.size(); ++i) {
        CHECK(corpus.alphabet[static_cast<size_t>(corpus.ids[i])] ==
              static_cast<unsigned char>(text[i]));
    }
    CHECK(corpus.train().size() + corpus.val().size() + corpus.test().size() == text.size());

    CHECK_THROWS_AS(make_char_corpus(""), ConfigError);
}

TEST_CASE("synthetic text is deterministic and plausible") {
    auto a = synthetic_char_text(2000, 9);
    auto b = synthetic_char_text(2000, 9);
    CHECK(a == b);
    CHECK(a.size() == 2000);
    auto c = synthetic_char_text(2000, 10);
    CHECK(a != c);

    bool has_space = false, has_period = false;
    for (char ch : a) {
        has_space = has_space || ch == ' ';
        has_period = has_period || ch == '.';
        const bool ok = (ch >= 'a' && ch <= 'z') || ch == ' ' || ch == '.' || ch == ',' ||
                        ch == '\n';
        CHECK(ok);
    }
    CHECK(has_space);
    CHECK(has_period);
}

TEST_CASE("uniform predictions cost exactly log2 vocab bits") {
    for (int64_t v : {2, 3, 256}) {
        CharPredictor uniform = [v](const std::vector<int64_t>&) {
            return std::vector<double>(static_cast<size_t>(v), 1.0 / static_cast<double>(v));
        };
        std::vector<int64_t> stream;
        Rng rng(static_cast<uint64_t>(v));
        for (int i = 0; i < 100; ++i) stream.push_back(rng.uniform_int(0, v - 1));
        CHECK(bits_per_character(uniform, stream, v) ==
              doctest::Approx(std::log2(static_cast<double>(v))).epsilon(1e-12));
    }
}

TEST_CASE("a perfect predictor costs zero bits and zero probability is an error") {
    std::vector<int64_t> stream = {0, 1, 0, 1};
    CharPredictor perfect = [&stream](const std::vector<int64_t>& ctx) {
        std::vector<double> p(2, 0.0);
        p[static_cast<size_t>(stream[ctx.size()])] = 1.0;
        return p;
    };
    CHECK(bits_per_character(perfect, stream, 2) == doctest::Approx(0.0));

    CharPredictor zero = [](const std::vector<int64_t>&) { return std::vector<double>{0.0, 1.0}; };
    CHECK_THROWS_AS(bits_per_character(zero, {0, 0}, 2), NumericError);
    CHECK_THROWS_AS(bits_per_character(perfect, {}, 2), ConfigError);
}

TEST_CASE("batches carry BOS, EOS, padding and weights") {
    std::vector<Seq2SeqPair> pairs = {{{1, 2, 3}, {3, 2, 1}}, {{4}, {4}}};
    const int64_t pad = 10, bos = 11, eos = 12;
    auto batch = make_batch(pairs, 0, 2, pad, bos, eos);

    CHECK(batch.src.batch == 2);
    CHECK(batch.src.time == 3);
    CHECK(batch.src.ids == std::vector<int64_t>{1, 2, 3, 4, pad, pad});

    // Target side: time = longest target + 1 for the shifted BOS/EOS.
    CHECK(batch.tgt_in.time == 4);
    CHECK(batch.tgt_in.ids == std::vector<int64_t>{bos, 3, 2, 1, bos, 4, pad, pad});
    CHECK(batch.tgt_out == std::vector<int64_t>{3, 2, 1, eos, 4, eos, pad, pad});
    CHECK(batch.tgt_weight == std::vector<double>{1, 1, 1, 1, 1, 1, 0, 0});
}

TEST_CASE("batcher covers each epoch exactly once and reshuffles") {
    std::vector<Seq2SeqPair> pairs;
    for (int64_t i = 0; i < 10; ++i) pairs.push_back({{i}, {i}});
    Batcher batcher(pairs, 3, 100, 101, 102, 55);
    CHECK(batcher.batches_per_epoch() == 4);

    std::vector<int64_t> seen;
    for (int b = 0; b < 4; ++b) {
        auto batch = batcher.next();
        for (int64_t r = 0; r < batch.src.batch; ++r) seen.push_back(batch.src.at(r, 0));
    }
    CHECK(batcher.epoch() == 0);
    std::sort(seen.begin(), seen.end());
    std::vector<int64_t> want(10);
    for (int64_t i = 0; i < 10; ++i) want[static_cast<size_t>(i)] = i;
    CHECK(seen == want);

    // Next epoch reshuffles deterministically but differently.
    std::vector<int64_t> second;
    for (int b = 0; b < 4; ++b) {
        auto batch = batcher.next();
        for (int64_t r = 0; r < batch.src.batch; ++r) second.push_back(batch.src.at(r, 0));
    }
    CHECK(batcher.epoch() == 1);
    auto sorted_second = second;
    std::sort(sorted_second.begin(), sorted_second.end());
    CHECK(sorted_second == want);
}

TEST_CASE("batcher replays identically for the same seed") {
    std::vector<Seq2SeqPair> pairs;
    for (int64_t i = 0; i < 7; ++i) pairs.push_back({{i, i}, {i}});
    Batcher a(pairs, 2, 50, 51, 52, 9);
    Batcher b(pairs, 2, 50, 51, 52, 9);
    for (int step = 0; step < 9; ++step) {
        auto ba = a.next();
        auto bb = b.next();
        CHECK(ba.src.ids == bb.src.ids);
        CHECK(ba.tgt_in.ids == bb.tgt_in.ids);
        CHECK(ba.tgt_out == bb.tgt_out);
    }
}

TEST_CASE("task names round trip") {
    for (auto t : {TaskKind::Copy, TaskKind::Reverse, TaskKind::Sort}) {
        CHECK(task_from_name(task_name(t)) == t);
    }
    CHECK_THROWS_AS(task_from_name("juggle"), ConfigError);
}

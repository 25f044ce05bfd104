#include "resformer/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "resformer/errors.hpp"
#include "resformer/trainer.hpp"

namespace resformer {

using nlohmann::json;

namespace {

template <class T>
T field(const json& j, const char* name, T fallback) {
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("field '") + name + "' has the wrong type");
    }
}

template <class T>
T required_field(const json& j, const char* name) {
    if (!j.contains(name)) throw ConfigError(std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("field '") + name + "' has the wrong type");
    }
}

ModelVariantConfig parse_variant(const json& j, int index) {
    ModelVariantConfig m;
    m.name = field<std::string>(j, "name", "model" + std::to_string(index));
    m.d_model = field<int64_t>(j, "d_model", m.d_model);
    m.heads = field<int64_t>(j, "heads", m.heads);
    m.d_ff = field<int64_t>(j, "d_ff", m.d_ff);
    m.layers = field<int64_t>(j, "layers", m.layers);
    m.decoder_layers = field<int64_t>(j, "decoder_layers", m.decoder_layers);
    m.pattern = field<std::string>(j, "pattern", m.pattern);
    m.n_reservoir = field<int64_t>(j, "n_reservoir", m.n_reservoir);
    m.strategy = field<std::string>(j, "strategy", m.strategy);
    m.kind = field<std::string>(j, "kind", m.kind);
    m.trainer_mode = field<std::string>(j, "trainer_mode", m.trainer_mode);
    m.layerdrop_p = field<double>(j, "layerdrop_p", m.layerdrop_p);
    m.backskip_warmup = field<int64_t>(j, "backskip_warmup", m.backskip_warmup);
    if (m.pattern.empty() && m.layers <= 0) {
        throw ConfigError("model '" + m.name + "': field 'layers' (or 'pattern') is required");
    }
    return m;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    c.task = field<std::string>(j, "task", c.task);
    c.vocab_size = field<int64_t>(j, "vocab_size", c.vocab_size);
    c.length_min = field<int64_t>(j, "length_min", c.length_min);
    c.length_max = field<int64_t>(j, "length_max", c.length_max);
    c.train_size = field<int64_t>(j, "train_size", c.train_size);
    c.val_size = field<int64_t>(j, "val_size", c.val_size);
    c.test_size = field<int64_t>(j, "test_size", c.test_size);
    c.seed = field<uint64_t>(j, "seed", c.seed);
    c.corpus_length = field<int64_t>(j, "corpus_length", c.corpus_length);
    c.context_len = field<int64_t>(j, "context_len", c.context_len);
    c.eval_chars = field<int64_t>(j, "eval_chars", c.eval_chars);

    if (j.contains("models")) {
        if (!j.at("models").is_array() || j.at("models").empty()) {
            throw ConfigError("field 'models' must be a non-empty array");
        }
        int idx = 0;
        for (const auto& mj : j.at("models")) c.models.push_back(parse_variant(mj, idx++));
    } else if (j.contains("model")) {
        c.models.push_back(parse_variant(j.at("model"), 0));
    } else {
        throw ConfigError("missing field 'model' or 'models'");
    }
    c.baseline = field<std::string>(j, "baseline", c.models.front().name);

    if (!j.contains("seeds")) throw ConfigError("missing field 'seeds'");
    if (j.at("seeds").is_array()) {
        c.seeds = field<std::vector<uint64_t>>(j, "seeds", {});
    } else {
        c.seeds = {required_field<uint64_t>(j, "seeds")};
    }
    c.t_hat_seconds = required_field<double>(j, "t_hat_seconds");
    c.eval_interval_steps = required_field<int64_t>(j, "eval_interval_steps");
    c.max_steps = required_field<int64_t>(j, "max_steps");
    c.output_dir = field<std::string>(j, "output_dir", c.output_dir);
    c.batch_size = field<int64_t>(j, "batch_size", c.batch_size);
    c.lr = field<double>(j, "lr", c.lr);
    c.warmup_steps = field<int64_t>(j, "warmup_steps", c.warmup_steps);
    c.virtual_clock = field<bool>(j, "virtual_clock", c.virtual_clock);
    validate_config(c);
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_experiment_config(ss.str());
}

void validate_config(const ExperimentConfig& c) {
    if (c.task != "copy" && c.task != "reverse" && c.task != "sort" && c.task != "char_lm") {
        throw ConfigError("field 'task' must be copy|reverse|sort|char_lm, got '" + c.task + "'");
    }
    if (c.seeds.empty()) throw ConfigError("field 'seeds' must list at least one seed");
    if (c.max_steps < 1) throw ConfigError("field 'max_steps' must be >= 1");
    if (c.eval_interval_steps < 1 || c.eval_interval_steps > c.max_steps) {
        throw ConfigError("field 'eval_interval_steps' must be in [1, max_steps]");
    }
    if (c.t_hat_seconds <= 0.0) throw ConfigError("field 't_hat_seconds' must be positive");
    if (c.batch_size < 1) throw ConfigError("field 'batch_size' must be >= 1");
    if (c.task != "char_lm") {
        if (c.vocab_size < 2) throw ConfigError("field 'vocab_size' must be >= 2");
        if (c.length_min < 1 || c.length_min > c.length_max) {
            throw ConfigError("fields 'length_min'/'length_max' form an invalid range");
        }
        if (c.train_size < 1 || c.val_size < 1) {
            throw ConfigError("fields 'train_size'/'val_size' must be >= 1");
        }
    } else {
        if (c.corpus_length < 1000) throw ConfigError("field 'corpus_length' must be >= 1000");
        if (c.context_len < 2) throw ConfigError("field 'context_len' must be >= 2");
    }
    bool baseline_found = false;
    for (const auto& m : c.models) {
        if (m.name == c.baseline) baseline_found = true;
        if (m.trainer_mode != "standard" && m.trainer_mode != "layerdrop" &&
            m.trainer_mode != "backskip") {
            throw ConfigError("model '" + m.name + "': field 'trainer_mode' must be " +
                              "standard|layerdrop|backskip");
        }
        if (m.trainer_mode == "layerdrop" && (m.layerdrop_p < 0.0 || m.layerdrop_p >= 1.0)) {
            throw ConfigError("model '" + m.name + "': field 'layerdrop_p' must be in [0, 1)");
        }
        if (c.task == "char_lm" && m.trainer_mode != "standard") {
            throw ConfigError("model '" + m.name +
                              "': field 'trainer_mode' must be standard for char_lm");
        }
        if (!m.pattern.empty()) {
            for (char ch : m.pattern) {
                if (ch != 'L' && ch != 'R') {
                    throw ConfigError("model '" + m.name + "': field 'pattern' must use L/R only");
                }
            }
        }
        layer_kind_from_name(m.kind);
        placement_from_name(m.strategy);
    }
    if (!baseline_found) {
        throw ConfigError("field 'baseline' names no configured model: '" + c.baseline + "'");
    }
}

namespace {

StackPattern variant_pattern(const ModelVariantConfig& mv) {
    const LayerKind kind = layer_kind_from_name(mv.kind);
    if (!mv.pattern.empty()) return StackPattern::parse(mv.pattern, kind);
    return place_reservoirs(mv.layers, mv.n_reservoir, placement_from_name(mv.strategy), kind);
}

ModelSpec variant_spec(const ExperimentConfig& cfg, const ModelVariantConfig& mv, uint64_t seed) {
    ModelSpec spec;
    spec.d_model = mv.d_model;
    spec.heads = mv.heads;
    spec.d_ff = mv.d_ff;
    spec.seed = seed;
    spec.encoder = variant_pattern(mv);
    if (cfg.task == "char_lm") {
        spec.arch = ModelArch::Lm;
        spec.max_len = cfg.context_len + 2;
    } else {
        spec.arch = ModelArch::Seq2Seq;
        spec.vocab_size = cfg.vocab_size;
        spec.max_len = cfg.length_max + 8;
        spec.decoder = place_reservoirs(mv.decoder_layers, 0, PlacementStrategy::Bottom);
    }
    return spec;
}

struct StepTimer {
    bool virtual_mode = false;
    double train_seconds = 0.0;  // cumulative, excludes evaluation time
    int64_t ticks = 0;

    double now() const { return virtual_mode ? static_cast<double>(ticks) : train_seconds; }
};

RunResult run_single_seq2seq(const ExperimentConfig& cfg, const ModelVariantConfig& mv,
                             uint64_t seed) {
    SyntheticSeq2SeqSpec tspec;
    tspec.task = task_from_name(cfg.task);
    tspec.vocab_size = cfg.vocab_size;
    tspec.length_min = cfg.length_min;
    tspec.length_max = cfg.length_max;
    tspec.train_size = cfg.train_size;
    tspec.val_size = cfg.val_size;
    tspec.test_size = cfg.test_size;
    tspec.seed = cfg.seed;
    Seq2SeqDataset data = generate_seq2seq(tspec);

    ModelSpec spec = variant_spec(cfg, mv, seed);
    Model model = build_model(spec);
    Optimizer opt({OptimizerKind::Adam, cfg.lr, 0.9, 0.98, 1e-9, cfg.warmup_steps, 0.0});
    Batcher batcher(data.train, cfg.batch_size, spec.pad_id(), spec.bos_id(), spec.eos_id(),
                    mix_seed(seed, 7));
    Rng drop_rng(mix_seed(seed, 21));
    LayerDropConfig drop_cfg{mv.layerdrop_p};
    BackskipConfig bk_cfg;
    bk_cfg.warmup_steps = mv.backskip_warmup >= 0 ? mv.backskip_warmup : cfg.max_steps / 10;
    BackskipState bk = make_backskip_state(mv.d_model, mix_seed(seed, 22), bk_cfg);

    RunResult res;
    res.curve.run_id = mv.name;
    res.curve.seed = seed;
    res.curve.direction = MetricDirection::HigherBetter;

    StepTimer timer;
    timer.virtual_mode = cfg.virtual_clock;
    res.curve.add(timer.now(), evaluate(model, data.val, EvalMetric::Bleu));

    double wall_total = 0.0;
    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
        Seq2SeqBatch batch = batcher.next();
        const auto t0 = std::chrono::steady_clock::now();
        if (mv.trainer_mode == "layerdrop") {
            layerdrop_step(model, batch, drop_cfg, drop_rng, opt);
        } else if (mv.trainer_mode == "backskip") {
            backskip_step(model, batch, bk, opt);
        } else {
            train_step(model, batch, opt);
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double dt = std::chrono::duration<double>(t1 - t0).count();
        wall_total += dt;
        timer.train_seconds += dt;
        timer.ticks += 1;
        if (step % cfg.eval_interval_steps == 0 || step == cfg.max_steps) {
            res.curve.add(timer.now(), evaluate(model, data.val, EvalMetric::Bleu));
        }
    }
    res.seconds_per_step = wall_total / static_cast<double>(cfg.max_steps);
    res.seconds_per_epoch = res.seconds_per_step * static_cast<double>(batcher.batches_per_epoch());
    return res;
}

RunResult run_single_lm(const ExperimentConfig& cfg, const ModelVariantConfig& mv, uint64_t seed) {
    CharLmCorpus corpus =
        make_char_corpus(synthetic_char_text(cfg.corpus_length, cfg.seed), 0.9, 0.05);
    ModelSpec spec = variant_spec(cfg, mv, seed);
    spec.vocab_size = corpus.vocab_size();
    Model model = build_model(spec);
    Optimizer opt({OptimizerKind::Adam, cfg.lr, 0.9, 0.98, 1e-9, cfg.warmup_steps, 0.0});

    const std::vector<int64_t> train = corpus.train();
    std::vector<int64_t> val = corpus.val();
    if (static_cast<int64_t>(val.size()) > cfg.eval_chars) {
        val.resize(static_cast<size_t>(cfg.eval_chars));
    }
    Rng rng(mix_seed(seed, 31));
    const int64_t w = cfg.context_len;
    const int64_t max_start = static_cast<int64_t>(train.size()) - w - 1;
    if (max_start < 0) throw ConfigError("field 'context_len' exceeds the training stream");

    RunResult res;
    res.curve.run_id = mv.name;
    res.curve.seed = seed;
    res.curve.direction = MetricDirection::LowerBetter;

    StepTimer timer;
    timer.virtual_mode = cfg.virtual_clock;
    res.curve.add(timer.now(), bits_per_character(model, val, w));

    double wall_total = 0.0;
    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
        TokenBatch in;
        in.batch = cfg.batch_size;
        in.time = w;
        in.ids.resize(static_cast<size_t>(cfg.batch_size * w));
        std::vector<int64_t> targets(static_cast<size_t>(cfg.batch_size * w));
        std::vector<double> weights(static_cast<size_t>(cfg.batch_size * w), 1.0);
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            const int64_t start = rng.uniform_int(0, max_start);
            in.ids[static_cast<size_t>(b * w)] = spec.bos_id();
            for (int64_t t = 0; t < w; ++t) {
                if (t + 1 < w) {
                    in.ids[static_cast<size_t>(b * w + t + 1)] = train[static_cast<size_t>(start + t)];
                }
                targets[static_cast<size_t>(b * w + t)] = train[static_cast<size_t>(start + t)];
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        train_step_lm(model, in, targets, weights, opt);
        const auto t1 = std::chrono::steady_clock::now();
        const double dt = std::chrono::duration<double>(t1 - t0).count();
        wall_total += dt;
        timer.train_seconds += dt;
        timer.ticks += 1;
        if (step % cfg.eval_interval_steps == 0 || step == cfg.max_steps) {
            res.curve.add(timer.now(), bits_per_character(model, val, w));
        }
    }
    res.seconds_per_step = wall_total / static_cast<double>(cfg.max_steps);
    const int64_t steps_per_epoch =
        std::max<int64_t>(1, static_cast<int64_t>(train.size()) / (cfg.batch_size * w));
    res.seconds_per_epoch = res.seconds_per_step * static_cast<double>(steps_per_epoch);
    return res;
}

int worker_count(size_t jobs) {
    const char* env = std::getenv("RESFORMER_WORKERS");
    int64_t n = 0;
    if (env && *env) {
        n = std::strtoll(env, nullptr, 10);
    }
    if (n <= 0) n = static_cast<int64_t>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    return static_cast<int>(std::min<int64_t>(n, static_cast<int64_t>(jobs)));
}

}  // namespace

RunResult run_single(const ExperimentConfig& cfg, const ModelVariantConfig& mv, uint64_t seed) {
    return cfg.task == "char_lm" ? run_single_lm(cfg, mv, seed) : run_single_seq2seq(cfg, mv, seed);
}

void run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    namespace fs = std::filesystem;
    const fs::path out(cfg.output_dir);
    fs::create_directories(out / "curves");
    fs::create_directories(out / "aucc");

    struct Job {
        size_t model_idx;
        size_t seed_idx;
    };
    std::vector<Job> jobs;
    for (size_t mi = 0; mi < cfg.models.size(); ++mi) {
        for (size_t si = 0; si < cfg.seeds.size(); ++si) jobs.push_back({mi, si});
    }
    std::vector<RunResult> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::atomic<size_t> next{0};

    auto work = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                results[i] = run_single(cfg, cfg.models[jobs[i].model_idx],
                                        cfg.seeds[jobs[i].seed_idx]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int workers = worker_count(jobs.size());
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (size_t i = 0; i < jobs.size(); ++i) {
        if (!errors[i].empty()) {
            throw NumericError("run '" + cfg.models[jobs[i].model_idx].name + "' seed " +
                               std::to_string(cfg.seeds[jobs[i].seed_idx]) +
                               " failed: " + errors[i]);
        }
    }

    std::vector<AuccReport> reports;
    for (size_t mi = 0; mi < cfg.models.size(); ++mi) {
        const auto& mv = cfg.models[mi];
        std::vector<ConvergenceCurve> curves;
        std::vector<double> sec_per_epoch;
        for (size_t si = 0; si < cfg.seeds.size(); ++si) {
            const RunResult& r = results[mi * cfg.seeds.size() + si];
            curves.push_back(r.curve);
            sec_per_epoch.push_back(r.seconds_per_epoch);
            save_curve_csv((out / "curves" /
                            (mv.name + "_seed" + std::to_string(cfg.seeds[si]) + ".csv"))
                               .string(),
                           r.curve);
        }
        AuccReport rep = aggregate_seeds(mv.name, curves, cfg.t_hat_seconds);
        rep.seconds_per_epoch = sec_per_epoch;
        Model probe = build_model(variant_spec(cfg, mv, cfg.seeds.front()));
        const ParamCensus census = param_census(probe);
        rep.stats.layers = static_cast<int64_t>(probe.encoder_layers.size());
        rep.stats.frozen = probe.spec.encoder.reservoir_count();
        rep.stats.trainable_params = census.trainable;
        rep.stats.total_params = census.total;
        reports.push_back(std::move(rep));
    }
    normalize_reports(reports);
    for (const auto& rep : reports) {
        save_report_json((out / "aucc" / (rep.model + ".json")).string(), rep);
    }
    std::ofstream table((out / "comparison.csv").string());
    if (!table) throw ConfigError("cannot write comparison table");
    table << compare_table(reports, cfg.baseline);
}

std::string compare_table(const std::vector<AuccReport>& reports, const std::string& baseline) {
    const AuccReport* base = nullptr;
    for (const auto& r : reports) {
        if (r.model == baseline) base = &r;
    }
    if (!base) throw ConfigError("baseline '" + baseline + "' not among the reports");
    const double base_ttm = mean_of(base->time_to_max);

    std::ostringstream os;
    os.precision(12);
    os << "model,layers,frozen,trainable_params,total_params,"
          "max_metric_mean,max_metric_std,time_to_max_mean,time_to_max_std,"
          "time_to_95_mean,time_to_99_mean,ratio_vs_baseline,"
          "seconds_per_epoch_mean,seconds_per_epoch_std,"
          "aucc_raw_mean,aucc_raw_std,aucc_normalized\n";
    for (const auto& r : reports) {
        const double ttm = mean_of(r.time_to_max);
        const double ratio = (&r == base) ? 1.0 : (base_ttm == 0.0 ? 0.0 : ttm / base_ttm);
        os << r.model << ',' << r.stats.layers << ',' << r.stats.frozen << ','
           << r.stats.trainable_params << ',' << r.stats.total_params << ','
           << mean_of(r.max_metric) << ',' << sample_std_of(r.max_metric) << ',' << ttm << ','
           << sample_std_of(r.time_to_max) << ',' << mean_of(r.time_to_95) << ','
           << mean_of(r.time_to_99) << ',' << ratio << ','
           << (r.seconds_per_epoch.empty() ? 0.0 : mean_of(r.seconds_per_epoch)) << ','
           << (r.seconds_per_epoch.empty() ? 0.0 : sample_std_of(r.seconds_per_epoch)) << ','
           << r.raw_mean << ',' << r.raw_std << ',' << r.normalized << "\n";
    }
    return os.str();
}

}  // namespace resformer

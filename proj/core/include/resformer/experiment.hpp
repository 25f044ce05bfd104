#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resformer/aucc.hpp"
#include "resformer/tasks.hpp"

namespace resformer {

struct ModelVariantConfig {
    std::string name;
    int64_t d_model = 64;
    int64_t heads = 4;
    int64_t d_ff = 0;  // 0 -> 4 * d_model
    int64_t layers = 0;
    int64_t decoder_layers = 1;
    std::string pattern;  // explicit "LLRLRLL"; empty -> placement fields below
    int64_t n_reservoir = 0;
    std::string strategy = "alternating_middle";
    std::string kind = "transformer";
    std::string trainer_mode = "standard";  // standard | layerdrop | backskip
    double layerdrop_p = 0.0;
    int64_t backskip_warmup = -1;  // -1 -> 10% of max_steps
};

struct ExperimentConfig {
    // task
    std::string task = "copy";  // copy | reverse | sort | char_lm
    int64_t vocab_size = 32;
    int64_t length_min = 5;
    int64_t length_max = 20;
    int64_t train_size = 2048;
    int64_t val_size = 64;
    int64_t test_size = 64;
    uint64_t seed = 0;  // dataset / corpus seed
    int64_t corpus_length = 100000;  // char_lm only
    int64_t context_len = 64;        // char_lm only
    int64_t eval_chars = 2048;       // char_lm only

    std::vector<ModelVariantConfig> models;
    std::string baseline;  // defaults to the first model

    std::vector<uint64_t> seeds;
    double t_hat_seconds = 0.0;
    int64_t eval_interval_steps = 0;
    int64_t max_steps = 0;
    std::string output_dir = "out";

    int64_t batch_size = 32;
    double lr = 3e-3;
    int64_t warmup_steps = 0;
    bool virtual_clock = false;
};

// Validation names the offending field in the error message.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
void validate_config(const ExperimentConfig& cfg);

struct RunResult {
    ConvergenceCurve curve;
    double seconds_per_step = 0.0;   // real wall-clock mean, always measured
    double seconds_per_epoch = 0.0;
};

// One (variant, seed) training run producing a convergence curve. Curve
// timestamps count cumulative training time: seconds in wall-clock mode,
// one tick per step with the virtual clock.
RunResult run_single(const ExperimentConfig& cfg, const ModelVariantConfig& variant,
                     uint64_t seed);

// Multi-seed runs for every variant, in parallel workers (RESFORMER_WORKERS
// env var caps the thread count). Writes per-seed curve CSVs, per-model
// AUCC JSON reports and a comparison table under output_dir.
void run_experiment(const ExperimentConfig& cfg);

// Comparison table (CSV text). Ratio column: variant time-to-max mean over
// the baseline's; the baseline row is exactly 1.
std::string compare_table(const std::vector<AuccReport>& reports, const std::string& baseline);

}  // namespace resformer

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace resformer {

enum class MetricDirection { HigherBetter, LowerBetter };

std::string direction_name(MetricDirection d);
MetricDirection direction_from_name(const std::string& s);

struct CurveSample {
    double wall_clock_s = 0.0;
    double metric = 0.0;
};

struct ConvergenceCurve {
    std::string run_id;
    uint64_t seed = 0;
    MetricDirection direction = MetricDirection::HigherBetter;
    std::vector<CurveSample> samples;

    // Appends a sample; timestamps must be strictly increasing.
    void add(double wall_clock_s, double metric);
};

// Trapezoidal integral of the metric over [first_sample_time, t_hat]. The
// last value is held constant beyond the final sample; a window ending
// before the final sample is cut by linear interpolation. A window ending
// at or before the first sample is an error.
double compute_aucc(const ConvergenceCurve& curve, double t_hat);

// Each value divided by the maximum of the set.
std::map<std::string, double> normalize(const std::map<std::string, double>& raw);

// Best value of the curve in its own direction.
double best_metric(const ConvergenceCurve& curve);

// First timestamp where the best-so-far envelope reaches the given fraction
// of the curve's final best (e.g. 0.95). For lower_better metrics the
// threshold is best / frac, i.e. within the same relative margin from above.
double time_to_best_fraction(const ConvergenceCurve& curve, double frac);

struct ModelStats {
    int64_t layers = 0;
    int64_t frozen = 0;
    int64_t trainable_params = 0;
    int64_t total_params = 0;
};

struct AuccReport {
    std::string model;
    double t_hat_s = 0.0;
    MetricDirection direction = MetricDirection::HigherBetter;
    std::vector<double> per_seed;  // raw AUCC, one entry per seed
    double raw_mean = 0.0;
    double raw_std = 0.0;      // sample standard deviation
    double normalized = 1.0;   // raw_mean / max raw_mean over the compared set

    // per-seed extras consumed by the comparison table
    std::vector<double> max_metric;
    std::vector<double> time_to_max;
    std::vector<double> time_to_95;
    std::vector<double> time_to_99;
    std::vector<double> seconds_per_epoch;
    ModelStats stats;
};

// Raw AUCC per seed plus mean and sample std; normalization happens later
// across the whole comparison set (normalize after averaging raw values).
AuccReport aggregate_seeds(const std::string& model, const std::vector<ConvergenceCurve>& curves,
                           double t_hat);

// Sets `normalized` on every report: raw_mean / max(raw_mean).
void normalize_reports(std::vector<AuccReport>& reports);

// CSV with header run_id,seed,wall_clock_s,metric (direction in a comment).
void save_curve_csv(const std::string& path, const ConvergenceCurve& curve);
ConvergenceCurve load_curve_csv(const std::string& path);

std::string report_json_text(const AuccReport& report);
void save_report_json(const std::string& path, const AuccReport& report);
AuccReport load_report_json(const std::string& path);

double mean_of(const std::vector<double>& v);
double sample_std_of(const std::vector<double>& v);

}  // namespace resformer

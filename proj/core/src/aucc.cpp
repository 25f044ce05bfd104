#include "resformer/aucc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "resformer/errors.hpp"

namespace resformer {

using nlohmann::json;

std::string direction_name(MetricDirection d) {
    return d == MetricDirection::HigherBetter ? "higher_better" : "lower_better";
}

MetricDirection direction_from_name(const std::string& s) {
    if (s == "higher_better") return MetricDirection::HigherBetter;
    if (s == "lower_better") return MetricDirection::LowerBetter;
    throw ConfigError("unknown metric direction '" + s + "'");
}

void ConvergenceCurve::add(double wall_clock_s, double metric) {
    if (!samples.empty() && wall_clock_s <= samples.back().wall_clock_s) {
        throw ConfigError("curve timestamps must be strictly increasing: " +
                          std::to_string(wall_clock_s) + " after " +
                          std::to_string(samples.back().wall_clock_s));
    }
    samples.push_back({wall_clock_s, metric});
}

double compute_aucc(const ConvergenceCurve& curve, double t_hat) {
    if (curve.samples.empty()) throw ConfigError("AUCC of an empty curve");
    if (t_hat <= curve.samples.front().wall_clock_s) {
        throw ConfigError("window " + std::to_string(t_hat) +
                          " ends at or before the first sample at " +
                          std::to_string(curve.samples.front().wall_clock_s));
    }
    double area = 0.0;
    const auto& s = curve.samples;
    for (size_t i = 0; i + 1 < s.size(); ++i) {
        const double t0 = s[i].wall_clock_s, t1 = s[i + 1].wall_clock_s;
        const double v0 = s[i].metric, v1 = s[i + 1].metric;
        if (t1 <= t_hat) {
            area += 0.5 * (v0 + v1) * (t1 - t0);
        } else {
            // window ends inside this segment
            const double vt = v0 + (v1 - v0) * (t_hat - t0) / (t1 - t0);
            area += 0.5 * (v0 + vt) * (t_hat - t0);
            return area;
        }
    }
    if (t_hat > s.back().wall_clock_s) {
        area += s.back().metric * (t_hat - s.back().wall_clock_s);
    }
    return area;
}

std::map<std::string, double> normalize(const std::map<std::string, double>& raw) {
    if (raw.empty()) throw ConfigError("normalize over an empty set");
    double mx = raw.begin()->second;
    for (const auto& [k, v] : raw) mx = std::max(mx, v);
    if (mx == 0.0) throw ConfigError("normalize with zero maximum");
    std::map<std::string, double> out;
    for (const auto& [k, v] : raw) out[k] = v / mx;
    return out;
}

double best_metric(const ConvergenceCurve& curve) {
    if (curve.samples.empty()) throw ConfigError("empty curve");
    double best = curve.samples.front().metric;
    for (const auto& s : curve.samples) {
        best = curve.direction == MetricDirection::HigherBetter ? std::max(best, s.metric)
                                                                : std::min(best, s.metric);
    }
    return best;
}

double time_to_best_fraction(const ConvergenceCurve& curve, double frac) {
    if (frac <= 0.0 || frac > 1.0) throw ConfigError("fraction must be in (0, 1]");
    const double best = best_metric(curve);
    const bool higher = curve.direction == MetricDirection::HigherBetter;
    const double target = higher ? best * frac : best / frac;
    for (const auto& s : curve.samples) {
        if (higher ? s.metric >= target : s.metric <= target) return s.wall_clock_s;
    }
    return curve.samples.back().wall_clock_s;  // unreachable: the best sample qualifies
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw ConfigError("mean of an empty set");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AuccReport aggregate_seeds(const std::string& model, const std::vector<ConvergenceCurve>& curves,
                           double t_hat) {
    if (curves.empty()) throw ConfigError("no curves for model '" + model + "'");
    AuccReport r;
    r.model = model;
    r.t_hat_s = t_hat;
    r.direction = curves.front().direction;
    for (const auto& c : curves) {
        r.per_seed.push_back(compute_aucc(c, t_hat));
        r.max_metric.push_back(best_metric(c));
        r.time_to_max.push_back(time_to_best_fraction(c, 1.0));
        r.time_to_95.push_back(time_to_best_fraction(c, 0.95));
        r.time_to_99.push_back(time_to_best_fraction(c, 0.99));
    }
    r.raw_mean = mean_of(r.per_seed);
    r.raw_std = sample_std_of(r.per_seed);
    return r;
}

void normalize_reports(std::vector<AuccReport>& reports) {
    if (reports.empty()) return;
    double mx = reports.front().raw_mean;
    for (const auto& r : reports) mx = std::max(mx, r.raw_mean);
    if (mx == 0.0) throw ConfigError("normalize with zero maximum");
    for (auto& r : reports) r.normalized = r.raw_mean / mx;
}

void save_curve_csv(const std::string& path, const ConvergenceCurve& curve) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    f << "# direction=" << direction_name(curve.direction) << "\n";
    f << "run_id,seed,wall_clock_s,metric\n";
    f.precision(17);
    for (const auto& s : curve.samples) {
        f << curve.run_id << ',' << curve.seed << ',' << s.wall_clock_s << ',' << s.metric << "\n";
    }
}

ConvergenceCurve load_curve_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for reading");
    ConvergenceCurve c;
    std::string line;
    bool header_seen = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos && line.find("direction") != std::string::npos) {
                c.direction = direction_from_name(line.substr(eq + 1));
            }
            continue;
        }
        if (!header_seen) {
            if (line != "run_id,seed,wall_clock_s,metric") {
                throw ConfigError("unexpected curve header in '" + path + "': " + line);
            }
            header_seen = true;
            continue;
        }
        std::istringstream in(line);
        std::string run_id, seed_s, t_s, v_s;
        if (!std::getline(in, run_id, ',') || !std::getline(in, seed_s, ',') ||
            !std::getline(in, t_s, ',') || !std::getline(in, v_s)) {
            throw ConfigError("malformed curve row: '" + line + "'");
        }
        c.run_id = run_id;
        c.seed = std::stoull(seed_s);
        c.add(std::stod(t_s), std::stod(v_s));
    }
    if (c.samples.empty()) throw ConfigError("curve file '" + path + "' has no samples");
    return c;
}

std::string report_json_text(const AuccReport& r) {
    json j;
    j["model"] = r.model;
    j["t_hat_s"] = r.t_hat_s;
    j["direction"] = direction_name(r.direction);
    j["per_seed"] = r.per_seed;
    j["raw_mean"] = r.raw_mean;
    j["raw_std"] = r.raw_std;
    j["normalized"] = r.normalized;
    j["max_metric"] = r.max_metric;
    j["time_to_max"] = r.time_to_max;
    j["time_to_95"] = r.time_to_95;
    j["time_to_99"] = r.time_to_99;
    j["seconds_per_epoch"] = r.seconds_per_epoch;
    j["layers"] = r.stats.layers;
    j["frozen"] = r.stats.frozen;
    j["trainable_params"] = r.stats.trainable_params;
    j["total_params"] = r.stats.total_params;
    return j.dump(2);
}

void save_report_json(const std::string& path, const AuccReport& r) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    f << report_json_text(r) << "\n";
}

AuccReport load_report_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "' for reading");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in '" + path + "': " + e.what());
    }
    AuccReport r;
    try {
        r.model = j.at("model").get<std::string>();
        r.t_hat_s = j.at("t_hat_s").get<double>();
        r.direction = direction_from_name(j.at("direction").get<std::string>());
        r.per_seed = j.at("per_seed").get<std::vector<double>>();
        r.raw_mean = j.at("raw_mean").get<double>();
        r.raw_std = j.at("raw_std").get<double>();
        r.normalized = j.at("normalized").get<double>();
        r.max_metric = j.value("max_metric", std::vector<double>{});
        r.time_to_max = j.value("time_to_max", std::vector<double>{});
        r.time_to_95 = j.value("time_to_95", std::vector<double>{});
        r.time_to_99 = j.value("time_to_99", std::vector<double>{});
        r.seconds_per_epoch = j.value("seconds_per_epoch", std::vector<double>{});
        r.stats.layers = j.value("layers", int64_t{0});
        r.stats.frozen = j.value("frozen", int64_t{0});
        r.stats.trainable_params = j.value("trainable_params", int64_t{0});
        r.stats.total_params = j.value("total_params", int64_t{0});
    } catch (const json::exception& e) {
        throw ConfigError("report '" + path + "' missing field: " + e.what());
    }
    return r;
}

}  // namespace resformer

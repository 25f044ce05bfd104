// resformer command line: run experiments, recompute AUCC from saved
// curves, and rebuild comparison tables from saved reports.

#include <glob.h>

#include <cstdint>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resformer/aucc.hpp"
#include "resformer/errors.hpp"
#include "resformer/experiment.hpp"

namespace {

// Expands shell-style patterns; literal paths pass through untouched so the
// command works whether or not the calling shell already expanded the glob.
std::vector<std::string> expand_globs(const std::vector<std::string>& patterns) {
    std::vector<std::string> paths;
    for (const auto& pat : patterns) {
        if (pat.find_first_of("*?[") == std::string::npos) {
            paths.push_back(pat);
            continue;
        }
        glob_t g;
        int rc = glob(pat.c_str(), 0, nullptr, &g);
        if (rc == 0) {
            for (size_t i = 0; i < g.gl_pathc; ++i) paths.emplace_back(g.gl_pathv[i]);
        }
        globfree(&g);
        if (rc != 0 && rc != GLOB_NOMATCH) {
            throw resformer::ConfigError("glob failed for pattern '" + pat + "'");
        }
    }
    if (paths.empty()) {
        throw resformer::ConfigError("no files matched the given pattern(s)");
    }
    return paths;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t used = 0;
        uint64_t v = std::stoull(item, &used);
        if (used != item.size()) {
            throw resformer::ConfigError("bad seed '" + item + "' in --seeds");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) throw resformer::ConfigError("--seeds given but empty");
    return seeds;
}

int cmd_run(const std::string& config_path, const std::string& seeds_csv,
            const std::string& out_dir, bool virtual_clock) {
    auto cfg = resformer::load_experiment_config(config_path);
    if (!seeds_csv.empty()) cfg.seeds = parse_seed_list(seeds_csv);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (virtual_clock) cfg.virtual_clock = true;
    resformer::validate_config(cfg);
    resformer::run_experiment(cfg);
    std::cout << "wrote results to " << cfg.output_dir << "\n";
    return 0;
}

int cmd_aucc(const std::vector<std::string>& patterns, double t_hat) {
    std::map<std::string, std::vector<resformer::ConvergenceCurve>> by_run;
    for (const auto& path : expand_globs(patterns)) {
        auto curve = resformer::load_curve_csv(path);
        by_run[curve.run_id].push_back(std::move(curve));
    }
    std::vector<resformer::AuccReport> reports;
    for (const auto& [run_id, curves] : by_run) {
        reports.push_back(resformer::aggregate_seeds(run_id, curves, t_hat));
    }
    resformer::normalize_reports(reports);
    std::cout << "[\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        std::cout << resformer::report_json_text(reports[i])
                  << (i + 1 < reports.size() ? "," : "") << "\n";
    }
    std::cout << "]\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& patterns, const std::string& baseline) {
    std::vector<resformer::AuccReport> reports;
    for (const auto& path : expand_globs(patterns)) {
        reports.push_back(resformer::load_report_json(path));
    }
    std::cout << resformer::compare_table(reports, baseline);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reservoir transformer experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string seeds_csv;
    std::string out_dir;
    bool virtual_clock = false;
    auto* run = app.add_subcommand("run", "train every configured variant and write artifacts");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--seeds", seeds_csv, "comma-separated seed override, e.g. 1,2,3");
    run->add_option("--out", out_dir, "output directory override");
    run->add_flag("--virtual-clock", virtual_clock, "count one tick per step instead of wall time");

    std::vector<std::string> curve_patterns;
    double t_hat = 0.0;
    auto* aucc = app.add_subcommand("aucc", "recompute AUCC reports from curve CSVs");
    aucc->add_option("--curves", curve_patterns, "curve CSV paths or glob patterns")
        ->required()
        ->expected(-1);
    aucc->add_option("--t-hat", t_hat, "integration window end in curve time units")->required();

    std::vector<std::string> report_patterns;
    std::string baseline;
    auto* compare = app.add_subcommand("compare", "rebuild the comparison table from reports");
    compare->add_option("--reports", report_patterns, "report JSON paths or glob patterns")
        ->required()
        ->expected(-1);
    compare->add_option("--baseline", baseline, "baseline model name")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, seeds_csv, out_dir, virtual_clock);
        if (aucc->parsed()) return cmd_aucc(curve_patterns, t_hat);
        if (compare->parsed()) return cmd_compare(report_patterns, baseline);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

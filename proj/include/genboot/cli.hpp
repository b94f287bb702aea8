#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "genboot/analyze.hpp"
#include "genboot/bootstrap.hpp"
#include "genboot/error.hpp"
#include "genboot/parallel.hpp"
#include "genboot/sim.hpp"
#include "genboot/version.hpp"

namespace genboot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

// Bad input that the user can fix: reported with exit code 1.
class InputError : public Error {
public:
    using Error::Error;
};

struct GlobalOptions {
    std::uint64_t seed = 1;
    unsigned threads = default_threads();
    std::string out = "./out";
    std::string config_path;
};

struct SimulateOptions {
    std::vector<std::string> scenarios;  // n1000, n5000, n10000
    std::string grid;                    // "full" selects all sizes and both PS specs
    std::string ps_spec = "misspecified";
    int datasets = 1000;
    int bootstrap = 1000;
    double trim_threshold = 20.0;
    bool refit_ps = false;
    double beta_true = sim::kTrueEffect;
    sim::CovariateModel covariates;
    std::vector<int> sample_sizes = {1000, 5000, 10000};
    std::vector<double> rhos = {0.0, 0.1};
    std::vector<double> noise_vars = {1.0, 0.3};
};

struct AnalyzeOptions {
    std::string data;
    std::string method = "all";
    int bootstrap = 1000;
    double trim_threshold = 20.0;
    bool refit_ps = false;
    bool dump_estimates = false;
    analyze::EmpiricalSchema schema;
};

struct WeightsOptions {
    std::string data;
    double threshold = 20.0;
    analyze::EmpiricalSchema schema;
};

namespace detail {

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

inline void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << text;
    if (!f) throw Error("failed writing '" + path.string() + "'");
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    try {
        json j = json::parse(f);
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        // A run manifest carries its resolved configuration under "config".
        if (j.contains("config") && j.contains("subcommand")) return j.at("config");
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid config file '" + path + "': " + e.what());
    }
}

template <typename T>
void take(const json& j, const char* key, T& target) {
    if (!j.contains(key)) return;
    try {
        target = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
    }
}

inline void read_schema(const json& j, analyze::EmpiricalSchema& s) {
    if (!j.contains("schema")) return;
    const auto& sj = j.at("schema");
    take(sj, "treatment", s.treatment);
    take(sj, "outcome", s.outcome);
    take(sj, "pretest", s.pretest);
    take(sj, "income", s.income);
    take(sj, "income_exclusion_from", s.income_exclusion_from);
}

inline json schema_json(const analyze::EmpiricalSchema& s) {
    return {{"treatment", s.treatment},
            {"outcome", s.outcome},
            {"pretest", s.pretest},
            {"income", s.income},
            {"income_exclusion_from", s.income_exclusion_from}};
}

inline std::vector<bootstrap::Method> parse_methods(const std::string& spec) {
    if (spec == "all") return {bootstrap::kAllMethods, bootstrap::kAllMethods + 3};
    std::vector<bootstrap::Method> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(bootstrap::parse_method(tok));
    if (out.empty()) throw ConfigError("no bootstrap method selected");
    return out;
}

inline void write_manifest(const fs::path& out, const std::string& subcommand, const json& config, std::uint64_t seed,
                           const std::string& started, const std::vector<std::string>& outputs) {
    json m;
    m["subcommand"] = subcommand;
    m["config"] = config;
    m["seed"] = seed;
    m["version"] = kVersion;
    m["started_at"] = started;
    m["finished_at"] = utc_now();
    m["outputs"] = outputs;
    write_file(out / "manifest.json", m.dump(2) + "\n");
}

}  // namespace detail

// ---- simulate ---------------------------------------------------------------

inline void merge_config(const json& j, SimulateOptions& o) {
    if (!j.contains("simulate")) return;
    const auto& s = j.at("simulate");
    detail::take(s, "sample_sizes", o.sample_sizes);
    detail::take(s, "rhos", o.rhos);
    detail::take(s, "noise_vars", o.noise_vars);
    detail::take(s, "ps_spec", o.ps_spec);
    detail::take(s, "datasets", o.datasets);
    detail::take(s, "bootstrap", o.bootstrap);
    detail::take(s, "trim_threshold", o.trim_threshold);
    detail::take(s, "refit_ps", o.refit_ps);
    detail::take(s, "beta_true", o.beta_true);
    if (s.contains("covariates")) {
        const auto& c = s.at("covariates");
        detail::take(c, "x_mean", o.covariates.x_mean);
        detail::take(c, "x_sd", o.covariates.x_sd);
        detail::take(c, "z_category_probs", o.covariates.z_category_probs);
        detail::take(c, "xz_correlation", o.covariates.xz_correlation);
    }
}

inline json resolved_json(const SimulateOptions& o, std::uint64_t seed) {
    return {{"seed", seed},
            {"simulate",
             {{"sample_sizes", o.sample_sizes},
              {"rhos", o.rhos},
              {"noise_vars", o.noise_vars},
              {"ps_spec", o.ps_spec},
              {"datasets", o.datasets},
              {"bootstrap", o.bootstrap},
              {"trim_threshold", o.trim_threshold},
              {"refit_ps", o.refit_ps},
              {"beta_true", o.beta_true},
              {"covariates",
               {{"x_mean", o.covariates.x_mean},
                {"x_sd", o.covariates.x_sd},
                {"z_category_probs", o.covariates.z_category_probs},
                {"xz_correlation", o.covariates.xz_correlation}}}}}};
}

inline std::vector<sim::ScenarioConfig> build_grid(const SimulateOptions& o) {
    sim::GridOptions g;
    g.sample_sizes = o.sample_sizes;
    g.rhos = o.rhos;
    g.noise_vars = o.noise_vars;
    if (o.ps_spec == "misspecified") g.ps_specs = {false};
    else if (o.ps_spec == "correct") g.ps_specs = {true};
    else if (o.ps_spec == "both") g.ps_specs = {false, true};
    else throw ConfigError("--ps-spec must be misspecified, correct or both");
    g.base.n_datasets = o.datasets;
    g.base.replicates = o.bootstrap;
    g.base.trim_threshold = o.trim_threshold;
    g.base.refit_propensity = o.refit_ps;
    g.base.beta_true = o.beta_true;
    g.base.covariates = o.covariates;
    auto grid = sim::make_grid(g);
    if (grid.empty()) throw ConfigError("scenario grid is empty");
    for (const auto& s : grid) s.validate();
    return grid;
}

inline int cmd_simulate(const GlobalOptions& g, const SimulateOptions& o) {
    const std::string started = detail::utc_now();
    const auto grid = build_grid(o);
    const fs::path out(g.out);
    fs::create_directories(out);
    const fs::path metrics_path = out / "metrics.csv";
    const fs::path datasets_path = out / "datasets.csv";
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    std::ofstream datasets(datasets_path, std::ios::binary | std::ios::trunc);
    if (!metrics || !datasets) throw Error("cannot open output files in '" + out.string() + "'");
    metrics << sim::metrics_csv_header() << '\n';
    datasets << sim::datasets_csv_header() << '\n';

    sim::StudyObserver obs;
    obs.on_progress = [](const sim::ScenarioConfig& s, std::size_t done, std::size_t total) {
        const std::size_t step = std::max<std::size_t>(1, total / 10);
        if (done % step == 0 || done == total) std::cerr << fmt::format("[{}] {}/{} datasets\n", s.label(), done, total);
    };
    obs.on_scenario = [&](const sim::ScenarioResult& r) {
        metrics << sim::metrics_csv_rows(r) << std::flush;
        datasets << sim::datasets_csv_rows(r) << std::flush;
    };
    sim::run_study(grid, g.seed, g.threads, obs);
    metrics.close();
    datasets.close();
    detail::write_manifest(out, "simulate", resolved_json(o, g.seed), g.seed, started,
                           {metrics_path.string(), datasets_path.string()});
    return kOk;
}

// ---- analyze ----------------------------------------------------------------

inline void merge_config(const json& j, AnalyzeOptions& o) {
    if (!j.contains("analyze")) return;
    const auto& a = j.at("analyze");
    detail::take(a, "data", o.data);
    detail::take(a, "method", o.method);
    detail::take(a, "bootstrap", o.bootstrap);
    detail::take(a, "trim_threshold", o.trim_threshold);
    detail::take(a, "refit_ps", o.refit_ps);
    detail::take(a, "dump_estimates", o.dump_estimates);
    detail::read_schema(a, o.schema);
}

inline json resolved_json(const AnalyzeOptions& o, std::uint64_t seed) {
    return {{"seed", seed},
            {"analyze",
             {{"data", o.data},
              {"method", o.method},
              {"bootstrap", o.bootstrap},
              {"trim_threshold", o.trim_threshold},
              {"refit_ps", o.refit_ps},
              {"dump_estimates", o.dump_estimates},
              {"schema", detail::schema_json(o.schema)}}}};
}

inline analyze::EmpiricalData load_input(const std::string& path, const analyze::EmpiricalSchema& schema) {
    if (path.empty()) throw InputError("--data is required");
    if (!fs::is_regular_file(path)) throw InputError("data file '" + path + "' does not exist");
    try {
        return analyze::load_empirical(path, schema);
    } catch (const MissingColumn& e) {
        throw InputError(e.what());
    } catch (const UnparseableRow& e) {
        throw InputError(e.what());
    } catch (const EmptyAfterFilter& e) {
        throw InputError(e.what());
    }
}

inline int cmd_analyze(const GlobalOptions& g, const AnalyzeOptions& o) {
    const std::string started = detail::utc_now();
    analyze::EmpiricalConfig cfg;
    cfg.methods = detail::parse_methods(o.method);
    cfg.replicates = o.bootstrap;
    cfg.trim_threshold = o.trim_threshold;
    cfg.refit_propensity = o.refit_ps;
    cfg.seed = g.seed;
    cfg.threads = g.threads;
    if (cfg.replicates < 2) throw ConfigError("--bootstrap must be at least 2");
    if (!(cfg.trim_threshold > 0.0)) throw ConfigError("--trim-threshold must be positive");
    const auto input = load_input(o.data, o.schema);

    const auto report = analyze::run_empirical(input, cfg, o.schema);
    for (const auto& r : report.results)
        std::cout << fmt::format("{}: mean {:.4f}  se {:.4f}  95% CI [{:.4f}, {:.4f}]  failed {}\n",
                                 bootstrap::to_string(r.method), r.mean, r.se, r.ci_low, r.ci_high, r.n_failed);

    const fs::path out(g.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& name, const std::string& text) {
        detail::write_file(out / name, text);
        outputs.push_back((out / name).string());
    };
    emit("report.json", analyze::to_json(report).dump(2) + "\n");
    emit("histograms.csv", analyze::histograms_csv(report.weights.histograms));
    if (o.dump_estimates)
        for (const auto& r : report.results)
            emit(fmt::format("estimates_{}.csv", bootstrap::to_string(r.method)), bootstrap::estimates_csv(r));
    detail::write_manifest(out, "analyze", resolved_json(o, g.seed), g.seed, started, outputs);
    return kOk;
}

// ---- weights ----------------------------------------------------------------

inline void merge_config(const json& j, WeightsOptions& o) {
    if (!j.contains("weights")) return;
    const auto& w = j.at("weights");
    detail::take(w, "data", o.data);
    detail::take(w, "threshold", o.threshold);
    detail::read_schema(w, o.schema);
}

inline json resolved_json(const WeightsOptions& o, std::uint64_t seed) {
    return {{"seed", seed},
            {"weights", {{"data", o.data}, {"threshold", o.threshold}, {"schema", detail::schema_json(o.schema)}}}};
}

inline int cmd_weights(const GlobalOptions& g, const WeightsOptions& o) {
    const std::string started = detail::utc_now();
    if (!(o.threshold > 0.0)) throw ConfigError("--threshold must be positive");
    const auto input = load_input(o.data, o.schema);
    const auto report = analyze::weight_report(input.data, analyze::empirical_ps_formula(o.schema), o.threshold);

    std::cout << fmt::format("rows retained {} (treated {}, control {}, control share {:.4f})\n",
                             input.summary.rows_retained, report.n_treated, report.n_control, report.control_share);
    std::cout << fmt::format("oversized IPTW weights (> {}): {}\n", o.threshold, report.overall.oversized_count);
    std::string csv = weights::diagnostics_csv_header() + "\n";
    csv += weights::diagnostics_csv_row("iptw_all", report.overall) + "\n";
    for (const auto& gw : report.groups) {
        const auto& d = gw.diagnostics;
        std::cout << fmt::format("{:8} n={:6} mean {:.4f} var {:.4f} oversized {} max {:.4f}\n", gw.group, gw.rows,
                                 d.mean, d.variance, d.oversized_count, d.max_weight);
        if (gw.gb_uniform)
            std::cout << fmt::format("{:8} GB sampling probabilities uniform ({:.6g} each)\n", gw.group, gw.gb_prob_min);
        else
            std::cout << fmt::format("{:8} GB sampling probabilities in [{:.6g}, {:.6g}]\n", gw.group, gw.gb_prob_min,
                                     gw.gb_prob_max);
        csv += weights::diagnostics_csv_row("iptw_" + gw.group, d) + "\n";
    }

    const fs::path out(g.out);
    fs::create_directories(out);
    detail::write_file(out / "weight_diagnostics.csv", csv);
    detail::write_file(out / "histograms.csv", analyze::histograms_csv(report.histograms));
    detail::write_file(out / "weights.json", analyze::to_json(report).dump(2) + "\n");
    detail::write_manifest(out, "weights", resolved_json(o, g.seed), g.seed, started,
                           {(out / "weight_diagnostics.csv").string(), (out / "histograms.csv").string(),
                            (out / "weights.json").string()});
    return kOk;
}

// ---- entry point ------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Generalized, ordinary and trimmed bootstrap for IPTW causal-effect estimation", "genboot"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    auto* seed_opt = app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
    auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    auto* out_opt = app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--config", g.config_path, "JSON config file or run manifest; explicit flags take precedence");

    SimulateOptions so;
    auto* sim_cmd = app.add_subcommand("simulate", "Run the simulation study");
    sim_cmd->add_option("--scenarios", so.scenarios, "Sample-size subset: n1000, n5000, n10000")->delimiter(',');
    sim_cmd->add_option("--grid", so.grid, "'full' runs all 24 scenarios");
    auto* ps_opt = sim_cmd->add_option("--ps-spec", so.ps_spec, "misspecified | correct | both");
    auto* sd_opt = sim_cmd->add_option("--datasets", so.datasets, "Datasets per scenario");
    auto* sb_opt = sim_cmd->add_option("--bootstrap", so.bootstrap, "Bootstrap replicates");
    auto* st_opt = sim_cmd->add_option("--trim-threshold", so.trim_threshold, "TB trim threshold");
    auto* sr_opt = sim_cmd->add_flag("--refit-ps", so.refit_ps, "Refit the propensity model inside replicates");

    AnalyzeOptions ao;
    auto* an_cmd = app.add_subcommand("analyze", "Analyze an empirical CSV with GB, OB and TB");
    auto* ad_opt = an_cmd->add_option("--data", ao.data, "Input CSV");
    auto* am_opt = an_cmd->add_option("--method", ao.method, "gb, ob, tb, a comma list, or all");
    auto* ab_opt = an_cmd->add_option("--bootstrap", ao.bootstrap, "Bootstrap replicates");
    auto* at_opt = an_cmd->add_option("--trim-threshold", ao.trim_threshold, "TB trim threshold");
    auto* ar_opt = an_cmd->add_flag("--refit-ps", ao.refit_ps, "Refit the propensity model inside replicates");
    auto* ae_opt = an_cmd->add_flag("--dump-estimates", ao.dump_estimates, "Write raw replicate estimates");

    WeightsOptions wo;
    auto* w_cmd = app.add_subcommand("weights", "Propensity fit and IPTW weight diagnostics");
    auto* wd_opt = w_cmd->add_option("--data", wo.data, "Input CSV");
    auto* wt_opt = w_cmd->add_option("--threshold", wo.threshold, "Oversized-weight threshold");

    for (auto* cmd : {an_cmd, w_cmd}) {
        auto& schema = cmd == an_cmd ? ao.schema : wo.schema;
        cmd->add_option("--treatment-col", schema.treatment);
        cmd->add_option("--outcome-col", schema.outcome);
        cmd->add_option("--pretest-col", schema.pretest);
        cmd->add_option("--income-col", schema.income);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        // Config values first, then explicitly given flags on top.
        GlobalOptions flags = g;
        SimulateOptions so_flags = so;
        AnalyzeOptions ao_flags = ao;
        WeightsOptions wo_flags = wo;
        if (!g.config_path.empty()) {
            const json cfg = detail::read_json_file(g.config_path);
            if (!seed_opt->count()) detail::take(cfg, "seed", g.seed);
            if (!out_opt->count()) detail::take(cfg, "out", g.out);
            so = SimulateOptions{};
            merge_config(cfg, so);
            ao = AnalyzeOptions{};
            merge_config(cfg, ao);
            wo = WeightsOptions{};
            merge_config(cfg, wo);
            if (ps_opt->count()) so.ps_spec = so_flags.ps_spec;
            if (sd_opt->count()) so.datasets = so_flags.datasets;
            if (sb_opt->count()) so.bootstrap = so_flags.bootstrap;
            if (st_opt->count()) so.trim_threshold = so_flags.trim_threshold;
            if (sr_opt->count()) so.refit_ps = so_flags.refit_ps;
            if (ad_opt->count()) ao.data = ao_flags.data;
            if (am_opt->count()) ao.method = ao_flags.method;
            if (ab_opt->count()) ao.bootstrap = ao_flags.bootstrap;
            if (at_opt->count()) ao.trim_threshold = ao_flags.trim_threshold;
            if (ar_opt->count()) ao.refit_ps = ao_flags.refit_ps;
            if (ae_opt->count()) ao.dump_estimates = ao_flags.dump_estimates;
            if (wd_opt->count()) wo.data = wo_flags.data;
            if (wt_opt->count()) wo.threshold = wo_flags.threshold;
            if (!an_cmd->get_option("--treatment-col")->empty()) ao.schema = ao_flags.schema;
            if (!w_cmd->get_option("--treatment-col")->empty()) wo.schema = wo_flags.schema;
        }
        if (!threads_opt->count()) g.threads = default_threads();

        if (*sim_cmd) {
            if (so.grid == "full") {
                so.sample_sizes = {1000, 5000, 10000};
                so.ps_spec = ps_opt->count() ? so_flags.ps_spec : "both";
            } else if (!so.grid.empty()) {
                throw ConfigError("--grid accepts only 'full'");
            }
            if (!so_flags.scenarios.empty()) {
                so.sample_sizes.clear();
                for (const auto& tok : so_flags.scenarios) {
                    if (tok.size() < 2 || tok[0] != 'n') throw ConfigError("unknown scenario token '" + tok + "'");
                    try {
                        so.sample_sizes.push_back(std::stoi(tok.substr(1)));
                    } catch (const std::exception&) {
                        throw ConfigError("unknown scenario token '" + tok + "'");
                    }
                }
            }
            return cmd_simulate(g, so);
        }
        if (*an_cmd) return cmd_analyze(g, ao);
        if (*w_cmd) return cmd_weights(g, wo);
        return kConfigError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

}  // namespace genboot::cli

#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "genboot/bootstrap.hpp"
#include "genboot/dataset.hpp"
#include "genboot/error.hpp"
#include "genboot/parallel.hpp"
#include "genboot/rng.hpp"

namespace genboot::sim {

inline constexpr double kTrueEffect = 1.677;
inline constexpr double kOutcomeNoiseVar = 27.4;
inline constexpr std::size_t kMinArmSize = 10;
inline constexpr int kMaxGenerationAttempts = 100;

// Joint law of the pretest score X and the 12-level income category Z,
// tied together by a Gaussian copula.
struct CovariateModel {
    double x_mean = 50.0;
    double x_sd = 10.0;
    std::vector<double> z_category_probs = {0.01, 0.01, 0.02, 0.03, 0.04, 0.06,
                                            0.09, 0.11, 0.14, 0.19, 0.17, 0.13};
    double xz_correlation = 0.3;

    void validate() const {
        if (!(x_sd > 0.0)) throw ConfigError("x_sd must be positive");
        if (z_category_probs.size() != 12) throw ConfigError("z_category_probs needs 12 entries");
        double s = 0.0;
        for (double p : z_category_probs) {
            if (!(p >= 0.0)) throw ConfigError("z_category_probs entries must be nonnegative");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("z_category_probs must sum to 1");
        if (!(xz_correlation > -1.0 && xz_correlation < 1.0)) throw ConfigError("xz_correlation must be in (-1, 1)");
    }
};

struct ScenarioConfig {
    int sample_size = 1000;
    double confounding_rho = 0.0;
    double selection_noise_var = 1.0;
    bool ps_correctly_specified = false;
    CovariateModel covariates;
    int n_datasets = 1000;
    int replicates = 1000;
    double trim_threshold = weights::kDefaultOversizedThreshold;
    bool refit_propensity = false;
    double beta_true = kTrueEffect;

    bool confounded() const noexcept { return confounding_rho != 0.0; }
    // Var(v) = 1 is the "less oversized" level; anything smaller produces more.
    bool more_oversized() const noexcept { return selection_noise_var < 1.0; }
    const char* ps_label() const noexcept { return ps_correctly_specified ? "correct" : "misspecified"; }

    // Identifies the data-generating process only; both PS specifications see the same datasets.
    std::string data_key() const {
        return fmt::format("n={};rho={};varv={}", sample_size, confounding_rho, selection_noise_var);
    }
    std::string label() const { return fmt::format("{};ps={}", data_key(), ps_label()); }

    void validate() const {
        if (sample_size < 2 * static_cast<int>(kMinArmSize)) throw ConfigError("sample_size too small");
        if (!(confounding_rho > -1.0 && confounding_rho < 1.0)) throw ConfigError("confounding_rho must be in (-1, 1)");
        if (!(selection_noise_var > 0.0)) throw ConfigError("selection_noise_var must be positive");
        if (n_datasets < 1) throw ConfigError("n_datasets must be at least 1");
        if (replicates < 2) throw ConfigError("bootstrap replicates must be at least 2");
        if (!(trim_threshold > 0.0)) throw ConfigError("trim_threshold must be positive");
        covariates.validate();
    }
};

struct GridOptions {
    std::vector<int> sample_sizes = {1000, 5000, 10000};
    std::vector<double> rhos = {0.0, 0.1};
    std::vector<double> noise_vars = {1.0, 0.3};
    std::vector<bool> ps_specs = {false, true};
    ScenarioConfig base;
};

// PS specification outermost, then size, confounding, oversized level (the
// appendix table order). The default options give the 24-scenario grid.
inline std::vector<ScenarioConfig> make_grid(const GridOptions& opt) {
    std::vector<ScenarioConfig> grid;
    for (bool spec : opt.ps_specs)
        for (int n : opt.sample_sizes)
            for (double rho : opt.rhos)
                for (double var : opt.noise_vars) {
                    ScenarioConfig s = opt.base;
                    s.sample_size = n;
                    s.confounding_rho = rho;
                    s.selection_noise_var = var;
                    s.ps_correctly_specified = spec;
                    grid.push_back(s);
                }
    return grid;
}

inline std::vector<ScenarioConfig> default_grid() { return make_grid(GridOptions{}); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Single draw; throws DegenerateTreatmentArm when an arm has fewer than 10 rows.
inline Dataset generate_dataset(const ScenarioConfig& s, rng::Engine& eng) {
    const auto n = static_cast<std::size_t>(s.sample_size);
    const auto& cov = s.covariates;
    std::vector<double> cut(cov.z_category_probs.size());
    std::partial_sum(cov.z_category_probs.begin(), cov.z_category_probs.end(), cut.begin());

    const double sd_u = std::sqrt(kOutcomeNoiseVar);
    const double sd_v = std::sqrt(s.selection_noise_var);
    const double rho_xz = cov.xz_correlation;
    const double rho_uv = s.confounding_rho;

    Dataset d;
    d.treatment_name = "W";
    d.outcome_name = "Y";
    d.treatment.resize(n);
    d.outcome.resize(n);
    std::vector<double> x(n), z(n);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std_normal(eng);
        const double b = rho_xz * a + std::sqrt(1.0 - rho_xz * rho_xz) * std_normal(eng);
        x[i] = cov.x_mean + cov.x_sd * a;
        const double q = normal_cdf(b);
        std::size_t k = 0;
        while (k + 1 < cut.size() && q > cut[k]) ++k;
        z[i] = static_cast<double>(k + 1);

        const double c1 = std_normal(eng);
        const double c2 = std_normal(eng);
        const double u = sd_u * c1;
        const double v = sd_v * (rho_uv * c1 + std::sqrt(1.0 - rho_uv * rho_uv) * c2);

        const double xi = x[i], zi = z[i];
        const double selection = -4.26 + 0.19 * zi + 0.047 * xi - 0.004 * xi * zi + 0.01 * zi * zi + v;
        const int w = selection > 0.0 ? 1 : 0;
        d.treatment[i] = w;
        d.outcome[i] = 2.15 + kTrueEffect * w + 0.9 * xi + 0.946 * zi - 0.013 * xi * zi + u;
    }
    d.add_covariate("X", std::move(x));
    d.add_covariate("Z", std::move(z));
    if (d.n_treated() < kMinArmSize || d.n_control() < kMinArmSize)
        throw DegenerateTreatmentArm(fmt::format("generated arm sizes n_t={}, n_c={}", d.n_treated(), d.n_control()));
    return d;
}

// Regenerates on successive substreams of `seed` until both arms have 10 rows.
inline Dataset generate_dataset_seeded(const ScenarioConfig& s, std::uint64_t seed, int* attempts_used = nullptr) {
    for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
        auto eng = rng::make_engine(rng::derive(seed, static_cast<std::uint64_t>(attempt)));
        try {
            auto d = generate_dataset(s, eng);
            if (attempts_used) *attempts_used = attempt + 1;
            return d;
        } catch (const DegenerateTreatmentArm&) {
        }
    }
    throw DegenerateTreatmentArm(fmt::format("scenario {}: no dataset with both arms >= {} after {} attempts",
                                             s.label(), kMinArmSize, kMaxGenerationAttempts));
}

inline ColumnSpec propensity_formula(bool correctly_specified) {
    ColumnSpec spec;
    spec.terms = {Term{{"Z"}}, Term{{"X"}}};
    if (correctly_specified) {
        spec.terms.push_back(Term{{"X", "Z"}});
        spec.terms.push_back(Term{{"Z", "Z"}});
    }
    return spec;
}

inline ColumnSpec outcome_formula() {
    ColumnSpec spec;
    spec.terms = {Term{{"W"}}, Term{{"X"}}, Term{{"Z"}}, Term{{"X", "Z"}}};
    return spec;
}

// sqrt(MSE - MB^2) over per-dataset estimates.
inline double true_se(std::span<const double> estimates, double beta_true = kTrueEffect) {
    if (estimates.empty()) throw InvalidArgument("true_se needs at least one estimate");
    const auto n = static_cast<double>(estimates.size());
    double mb = 0.0, mse = 0.0;
    for (double e : estimates) {
        mb += e - beta_true;
        mse += (e - beta_true) * (e - beta_true);
    }
    mb /= n;
    mse /= n;
    return std::sqrt(std::max(0.0, mse - mb * mb));
}

// Variance ratio against the OB reference.
inline double relative_efficiency(double value, double ob_value) {
    return (value / ob_value) * (value / ob_value);
}

struct MethodEstimate {
    double mean = 0.0;
    double se = 0.0;
};

// One simulated dataset's bootstrap summaries, indexed GB, OB, TB.
struct DatasetResult {
    std::array<MethodEstimate, 3> by_method{};
};

struct MethodMetrics {
    double mean_bias = 0.0;
    double true_se = 0.0;
    double mean_se = 0.0;
    double se_of_se = 0.0;
    double underestimation_proportion = 0.0;
    double coverage = 0.0;
    double re_point = 1.0;
    double re_se = 1.0;
};

struct ScenarioMetrics {
    std::array<MethodMetrics, 3> by_method{};
    const MethodMetrics& operator[](bootstrap::Method m) const { return by_method[static_cast<std::size_t>(m)]; }
};

inline ScenarioMetrics scenario_metrics(std::span<const DatasetResult> results, double beta_true = kTrueEffect) {
    if (results.empty()) throw InvalidArgument("scenario_metrics needs at least one dataset");
    const auto n = static_cast<double>(results.size());
    ScenarioMetrics out;
    for (std::size_t m = 0; m < 3; ++m) {
        std::vector<double> means, ses;
        for (const auto& r : results) {
            means.push_back(r.by_method[m].mean);
            ses.push_back(r.by_method[m].se);
        }
        auto& mm = out.by_method[m];
        mm.mean_bias = std::accumulate(means.begin(), means.end(), 0.0) / n - beta_true;
        mm.true_se = true_se(means, beta_true);
        mm.mean_se = std::accumulate(ses.begin(), ses.end(), 0.0) / n;
        double ss = 0.0;
        for (double s : ses) ss += (s - mm.mean_se) * (s - mm.mean_se);
        mm.se_of_se = results.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        std::size_t under = 0, covered = 0;
        for (std::size_t i = 0; i < results.size(); ++i) {
            if (ses[i] < mm.true_se) ++under;
            if (std::abs(means[i] - beta_true) <= bootstrap::kCiMultiplier * ses[i]) ++covered;
        }
        mm.underestimation_proportion = static_cast<double>(under) / n;
        mm.coverage = static_cast<double>(covered) / n;
    }
    const auto& ob = out.by_method[static_cast<std::size_t>(bootstrap::Method::OB)];
    const double ob_true = ob.true_se, ob_sese = ob.se_of_se;
    for (auto& mm : out.by_method) {
        mm.re_point = relative_efficiency(mm.true_se, ob_true);
        mm.re_se = relative_efficiency(mm.se_of_se, ob_sese);
    }
    return out;
}

inline std::uint64_t dataset_seed(const ScenarioConfig& s, std::uint64_t master_seed, std::size_t index) {
    return rng::derive(rng::derive(master_seed, rng::tag(s.data_key())), index);
}

inline std::uint64_t method_seed(std::uint64_t dataset_seed, bootstrap::Method m) {
    return rng::derive(dataset_seed, rng::tag(std::string("bootstrap:") + bootstrap::to_string(m)));
}

// Simulates dataset `index` of a scenario and runs all three procedures on it.
inline DatasetResult run_dataset(const ScenarioConfig& s, std::uint64_t master_seed, std::size_t index) {
    const std::uint64_t seed = dataset_seed(s, master_seed, index);
    const Dataset data = generate_dataset_seeded(s, seed);
    const ColumnSpec ps = propensity_formula(s.ps_correctly_specified);
    const ColumnSpec outcome = outcome_formula();
    const auto fit = bootstrap::fit_propensity(data, ps);
    DatasetResult out;
    for (auto m : bootstrap::kAllMethods) {
        bootstrap::BootstrapConfig cfg;
        cfg.method = m;
        cfg.replicates = s.replicates;
        cfg.trim_threshold = s.trim_threshold;
        cfg.refit_propensity = s.refit_propensity;
        cfg.master_seed = method_seed(seed, m);
        const bootstrap::BootstrapPlan plan(data, fit.fitted_propensity, outcome, cfg, ps);
        const auto r = bootstrap::run_plan(plan, 1);
        out.by_method[static_cast<std::size_t>(m)] = {r.mean, r.se};
    }
    return out;
}

struct ScenarioResult {
    ScenarioConfig scenario;
    std::vector<DatasetResult> datasets;
    ScenarioMetrics metrics;
};

struct StudyObserver {
    std::function<void(const ScenarioConfig&, std::size_t done, std::size_t total)> on_progress;
    std::function<void(const ScenarioResult&)> on_scenario;
};

// Datasets within a scenario run in parallel; each reports by index, so the
// output is the same for any thread count.
inline std::vector<ScenarioResult> run_study(const std::vector<ScenarioConfig>& grid, std::uint64_t master_seed,
                                             unsigned threads = 1, const StudyObserver& observer = {}) {
    if (grid.empty()) throw InvalidArgument("run_study needs at least one scenario");
    for (const auto& s : grid) s.validate();
    std::vector<ScenarioResult> results;
    for (const auto& s : grid) {
        ScenarioResult sr;
        sr.scenario = s;
        sr.datasets.resize(static_cast<std::size_t>(s.n_datasets));
        std::atomic<std::size_t> done{0};
        std::mutex progress_mutex;
        try {
            parallel_for(sr.datasets.size(), threads, [&](std::size_t i) {
                sr.datasets[i] = run_dataset(s, master_seed, i);
                const auto finished = ++done;
                if (observer.on_progress) {
                    std::lock_guard lock(progress_mutex);
                    observer.on_progress(s, finished, sr.datasets.size());
                }
            });
        } catch (const Error& e) {
            throw Error(fmt::format("scenario {}: {}", s.label(), e.what()));
        }
        sr.metrics = scenario_metrics(sr.datasets, s.beta_true);
        if (observer.on_scenario) observer.on_scenario(sr);
        results.push_back(std::move(sr));
    }
    return results;
}

inline std::string metrics_csv_header() {
    return "sample_size,confounding,oversized,ps_spec,method,mean_bias,true_se,mean_se,se_of_se,underest_prop,"
           "coverage,re_point,re_se";
}

inline std::string metrics_csv_rows(const ScenarioResult& r) {
    std::string out;
    const auto& s = r.scenario;
    for (auto m : bootstrap::kAllMethods) {
        const auto& mm = r.metrics[m];
        out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", s.sample_size,
                           s.confounded() ? "yes" : "no", s.more_oversized() ? "more" : "less", s.ps_label(),
                           bootstrap::to_string(m), mm.mean_bias, mm.true_se, mm.mean_se, mm.se_of_se,
                           mm.underestimation_proportion, mm.coverage, mm.re_point, mm.re_se);
    }
    return out;
}

inline std::string datasets_csv_header() { return "scenario,dataset_index,method,mean,se"; }

inline std::string datasets_csv_rows(const ScenarioResult& r) {
    std::string out;
    const auto label = r.scenario.label();
    for (std::size_t i = 0; i < r.datasets.size(); ++i)
        for (auto m : bootstrap::kAllMethods) {
            const auto& e = r.datasets[i].by_method[static_cast<std::size_t>(m)];
            out += fmt::format("{},{},{},{:.10f},{:.10f}\n", label, i, bootstrap::to_string(m), e.mean, e.se);
        }
    return out;
}

}  // namespace genboot::sim

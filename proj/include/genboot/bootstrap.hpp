#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "genboot/dataset.hpp"
#include "genboot/error.hpp"
#include "genboot/model.hpp"
#include "genboot/parallel.hpp"
#include "genboot/rng.hpp"
#include "genboot/weights.hpp"

namespace genboot::bootstrap {

inline constexpr double kCiMultiplier = 1.96;

enum class Method { GB, OB, TB };

inline constexpr Method kAllMethods[] = {Method::GB, Method::OB, Method::TB};

inline const char* to_string(Method m) noexcept {
    switch (m) {
        case Method::GB: return "GB";
        case Method::OB: return "OB";
        case Method::TB: return "TB";
    }
    return "?";
}

inline Method parse_method(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (s == "GB") return Method::GB;
    if (s == "OB") return Method::OB;
    if (s == "TB") return Method::TB;
    throw ConfigError("unknown bootstrap method '" + s + "' (expected gb, ob or tb)");
}

struct BootstrapConfig {
    Method method = Method::GB;
    int replicates = 1000;
    double trim_threshold = weights::kDefaultOversizedThreshold;
    bool refit_propensity = false;
    std::uint64_t master_seed = 1;

    void validate() const {
        if (replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
        if (method == Method::TB && !(trim_threshold > 0.0)) throw ConfigError("trim threshold must be positive");
    }
};

struct BootstrapResult {
    Method method = Method::GB;
    int replicates = 0;
    std::uint64_t seed = 0;
    std::vector<double> estimates;  // length B, NaN where the replicate was skipped
    double mean = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_failed = 0;
};

struct Summary {
    double mean = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t retained = 0;
};

// Mean, sample standard deviation (B-1) and mean +/- 1.96 se over the finite entries.
inline Summary summarize(std::span<const double> estimates) {
    Summary s;
    double sum = 0.0;
    for (double x : estimates)
        if (std::isfinite(x)) {
            sum += x;
            ++s.retained;
        }
    if (s.retained == 0) throw InvalidArgument("no retained bootstrap estimates");
    s.mean = sum / static_cast<double>(s.retained);
    double ss = 0.0;
    for (double x : estimates)
        if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
    s.se = s.retained > 1 ? std::sqrt(ss / static_cast<double>(s.retained - 1)) : 0.0;
    s.ci_low = s.mean - kCiMultiplier * s.se;
    s.ci_high = s.mean + kCiMultiplier * s.se;
    return s;
}

// Categorical draws via a Walker/Vose alias table: one uniform picks a column
// and decides between it and its alias. Zero-probability categories keep a
// zero keep-probability and are never returned.
class CategoricalSampler {
public:
    CategoricalSampler() = default;

    explicit CategoricalSampler(std::span<const double> probs) : keep_(probs.size()), alias_(probs.size()) {
        const std::size_t n = probs.size();
        if (n == 0) throw InvalidArgument("categorical sampler needs at least one category");
        double total = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(probs[i] >= 0.0) || !std::isfinite(probs[i]))
                throw InvalidArgument(fmt::format("probability {} at index {} is invalid", probs[i], i));
            total += probs[i];
            if (probs[i] > 0.0) last_positive = i;
        }
        if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument(fmt::format("probabilities sum to {}, not 1", total));

        std::vector<double> scaled(n);
        std::vector<std::size_t> small, large;
        for (std::size_t i = 0; i < n; ++i) {
            scaled[i] = probs[i] * static_cast<double>(n) / total;
            (scaled[i] < 1.0 ? small : large).push_back(i);
        }
        while (!small.empty() && !large.empty()) {
            const std::size_t s = small.back();
            small.pop_back();
            const std::size_t l = large.back();
            keep_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if (scaled[l] < 1.0) {
                large.pop_back();
                small.push_back(l);
            }
        }
        // Leftovers differ from 1 only by rounding.
        for (std::size_t l : large) {
            keep_[l] = 1.0;
            alias_[l] = l;
        }
        for (std::size_t s : small) {
            keep_[s] = probs[s] > 0.0 ? 1.0 : 0.0;
            alias_[s] = probs[s] > 0.0 ? s : last_positive;
        }
    }

    std::size_t size() const noexcept { return keep_.size(); }

    std::size_t draw(rng::Engine& eng) const {
        const double u = rng::uniform01(eng) * static_cast<double>(keep_.size());
        const auto column = std::min(static_cast<std::size_t>(u), keep_.size() - 1);
        return (u - static_cast<double>(column)) < keep_[column] ? column : alias_[column];
    }

    void counts(std::size_t draws, rng::Engine& eng, std::vector<int>& out) const {
        out.assign(keep_.size(), 0);
        for (std::size_t d = 0; d < draws; ++d) ++out[draw(eng)];
    }

private:
    std::vector<double> keep_;
    std::vector<std::size_t> alias_;
};

// Multinomial(size, probs) realized as `size` independent categorical draws.
inline std::vector<int> multinomial_counts(std::span<const double> probs, std::size_t size, rng::Engine& eng) {
    if (size < 1) throw InvalidArgument("multinomial size must be at least 1");
    std::vector<int> out;
    CategoricalSampler(probs).counts(size, eng, out);
    return out;
}

// Everything one dataset needs to produce replicate estimates for one method.
// Replicate weights live on the original row set; unsampled rows carry weight 0.
class BootstrapPlan {
public:
    BootstrapPlan(const Dataset& data, std::span<const double> propensity, const ColumnSpec& outcome_spec,
                  const BootstrapConfig& config, std::optional<ColumnSpec> ps_spec = std::nullopt)
        : config_(config),
          treatment_(data.treatment),
          response_(data.outcome),
          design_(build_design(data, outcome_spec)),
          names_(outcome_spec.column_names()),
          treated_rows_(data.treated_rows()),
          control_rows_(data.control_rows()),
          propensity_(propensity.begin(), propensity.end()) {
        config.validate();
        effect_column_ = outcome_spec.column_of(data.treatment_name);
        if (effect_column_ == ColumnSpec::npos)
            throw ConfigError("outcome formula must include the treatment column '" + data.treatment_name + "'");
        if (propensity.size() != data.n_rows()) throw InvalidArgument("propensity length does not match dataset");
        if (treated_rows_.empty() || control_rows_.empty())
            throw InvalidArgument("bootstrap needs both treated and control rows");
        if (config.refit_propensity) {
            if (!ps_spec) throw ConfigError("refit_propensity requires the propensity formula");
            ps_design_ = build_design(data, *ps_spec);
            ps_names_ = ps_spec->column_names();
        }

        const auto probs = weights::gb_sampling_probabilities(propensity_, treatment_);
        if (config.method == Method::GB) {
            sampler_t_ = CategoricalSampler(probs.treated);
            sampler_c_ = CategoricalSampler(probs.control);
        } else {
            const std::vector<double> ut(treated_rows_.size(), 1.0 / static_cast<double>(treated_rows_.size()));
            const std::vector<double> uc(control_rows_.size(), 1.0 / static_cast<double>(control_rows_.size()));
            sampler_t_ = CategoricalSampler(ut);
            sampler_c_ = CategoricalSampler(uc);
        }
        unit_weight_ = occurrence_weights(propensity_);
    }

    const BootstrapConfig& config() const noexcept { return config_; }
    std::size_t n_treated() const noexcept { return treated_rows_.size(); }
    std::size_t n_control() const noexcept { return control_rows_.size(); }
    std::size_t effect_column() const noexcept { return effect_column_; }

    // Objective weight carried by one occurrence of each row: 1/(n_t p_i) for GB,
    // the IPTW weight for OB, the trimmed IPTW weight for TB.
    const std::vector<double>& unit_weights() const noexcept { return unit_weight_; }

    // Treatment coefficient for fixed per-group counts (indexed like treated_rows / control_rows).
    double estimate_from_counts(std::span<const int> counts_t, std::span<const int> counts_c) const {
        if (counts_t.size() != treated_rows_.size() || counts_c.size() != control_rows_.size())
            throw InvalidArgument("count vectors do not match the group sizes");
        std::vector<double> freq(response_.size(), 0.0);
        spread(counts_t, counts_c, freq);
        if (!config_.refit_propensity) return solve(freq, unit_weight_);

        // Refit on the resampled rows with frequency weights, then rescore every row.
        std::vector<double> treat(treatment_.begin(), treatment_.end());
        std::vector<double> e;
        try {
            const auto fit = model::fit_logistic(ps_design_, treat, {}, freq, ps_names_);
            e = model::predict_propensity(ps_design_, fit.coefficients);
        } catch (const Error& err) {
            throw ReplicateDegenerate(std::string("propensity refit failed: ") + err.what());
        }
        return solve(freq, occurrence_weights(e));
    }

    double replicate(rng::Engine& eng) const {
        std::vector<int> kt, kc;
        sampler_t_.counts(treated_rows_.size(), eng, kt);
        sampler_c_.counts(control_rows_.size(), eng, kc);
        return estimate_from_counts(kt, kc);
    }

private:
    std::vector<double> occurrence_weights(const std::vector<double>& e) const {
        std::vector<double> w;
        switch (config_.method) {
            case Method::GB: w = weights::gb_objective_weights(e, treatment_).weight; break;
            case Method::OB: w = weights::iptw_weights(e, treatment_).weight; break;
            case Method::TB:
                w = weights::trim_weights(weights::iptw_weights(e, treatment_), config_.trim_threshold).weight;
                break;
        }
        return w;
    }

    void spread(std::span<const int> counts_t, std::span<const int> counts_c, std::vector<double>& freq) const {
        for (std::size_t i = 0; i < treated_rows_.size(); ++i) freq[treated_rows_[i]] = counts_t[i];
        for (std::size_t j = 0; j < control_rows_.size(); ++j) freq[control_rows_[j]] = counts_c[j];
    }

    double solve(const std::vector<double>& freq, const std::vector<double>& unit) const {
        std::vector<double> w(freq.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = freq[i] * unit[i];
        try {
            const auto fit = model::weighted_least_squares(design_, response_, w, names_);
            return fit.coefficients(static_cast<Eigen::Index>(effect_column_));
        } catch (const RankDeficientDesign& err) {
            throw ReplicateDegenerate(err.what());
        }
    }

    BootstrapConfig config_;
    std::vector<int> treatment_;
    std::vector<double> response_;
    Eigen::MatrixXd design_;
    std::vector<std::string> names_;
    std::vector<std::size_t> treated_rows_;
    std::vector<std::size_t> control_rows_;
    std::vector<double> propensity_;
    std::vector<double> unit_weight_;
    CategoricalSampler sampler_t_;
    CategoricalSampler sampler_c_;
    std::size_t effect_column_ = 0;
    Eigen::MatrixXd ps_design_;
    std::vector<std::string> ps_names_;
};

inline std::uint64_t replicate_seed(std::uint64_t master_seed, std::size_t replicate) {
    return rng::derive(master_seed, replicate);
}

// One replicate estimate for an explicit RNG stream.
inline double replicate_estimate(const BootstrapPlan& plan, rng::Engine& eng) { return plan.replicate(eng); }

// Runs the B replicates of a prepared plan. Replicate r uses the stream
// derive(master_seed, r), so results do not depend on `threads`.
inline BootstrapResult run_plan(const BootstrapPlan& plan, unsigned threads = 1) {
    const auto& cfg = plan.config();
    BootstrapResult result;
    result.method = cfg.method;
    result.replicates = cfg.replicates;
    result.seed = cfg.master_seed;
    result.estimates.assign(static_cast<std::size_t>(cfg.replicates), std::numeric_limits<double>::quiet_NaN());
    parallel_for(result.estimates.size(), threads, [&](std::size_t r) {
        auto eng = rng::make_engine(replicate_seed(cfg.master_seed, r));
        try {
            result.estimates[r] = plan.replicate(eng);
        } catch (const ReplicateDegenerate&) {
            // stays NaN
        }
    });
    result.n_failed = static_cast<int>(
        std::count_if(result.estimates.begin(), result.estimates.end(), [](double x) { return !std::isfinite(x); }));
    if (result.n_failed * 10 > cfg.replicates)
        throw TooManyFailures(fmt::format("{} of {} {} replicates were degenerate (limit 10%)", result.n_failed,
                                          cfg.replicates, to_string(cfg.method)));
    const auto s = summarize(result.estimates);
    result.mean = s.mean;
    result.se = s.se;
    result.ci_low = s.ci_low;
    result.ci_high = s.ci_high;
    return result;
}

inline model::LogisticFit fit_propensity(const Dataset& data, const ColumnSpec& ps_spec,
                                         const model::LogisticOptions& options = {}) {
    const Eigen::MatrixXd design = build_design(data, ps_spec);
    const std::vector<double> treat(data.treatment.begin(), data.treatment.end());
    const auto names = ps_spec.column_names();
    return model::fit_logistic(design, treat, options, {}, names);
}

// Fits the propensity model on the original rows, then bootstraps.
inline BootstrapResult run_bootstrap(const Dataset& data, const ColumnSpec& ps_spec, const ColumnSpec& outcome_spec,
                                     const BootstrapConfig& config, unsigned threads = 1,
                                     const model::LogisticOptions& options = {}) {
    data.validate();
    check_spec(data, ps_spec);
    check_spec(data, outcome_spec);
    config.validate();
    const auto fit = fit_propensity(data, ps_spec, options);
    const BootstrapPlan plan(data, fit.fitted_propensity, outcome_spec, config, ps_spec);
    return run_plan(plan, threads);
}

inline nlohmann::json to_json(const BootstrapResult& r) {
    return {{"method", to_string(r.method)}, {"B", r.replicates}, {"n_failed", r.n_failed}, {"mean", r.mean},
            {"se", r.se},           {"ci_low", r.ci_low},    {"ci_high", r.ci_high},   {"seed", r.seed}};
}

inline std::string estimates_csv(const BootstrapResult& r) {
    std::string out = "estimate\n";
    for (double x : r.estimates) out += std::isfinite(x) ? fmt::format("{:.17g}\n", x) : std::string("NA\n");
    return out;
}

}  // namespace genboot::bootstrap

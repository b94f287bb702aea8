#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "genboot/error.hpp"

namespace genboot::weights {

inline constexpr double kDefaultOversizedThreshold = 20.0;

enum class WeightKind { iptw, trimmed, gb_objective };

inline const char* to_string(WeightKind k) noexcept {
    switch (k) {
        case WeightKind::iptw: return "iptw";
        case WeightKind::trimmed: return "trimmed";
        case WeightKind::gb_objective: return "gb_objective";
    }
    return "?";
}

struct WeightSet {
    std::vector<double> weight;
    std::vector<int> group;  // 1 treated, 0 control
    WeightKind kind = WeightKind::iptw;
    std::optional<double> trim_threshold;

    std::size_t size() const noexcept { return weight.size(); }

    std::vector<double> of_group(int g) const {
        std::vector<double> out;
        for (std::size_t i = 0; i < weight.size(); ++i)
            if (group[i] == g) out.push_back(weight[i]);
        return out;
    }
};

// Generalized bootstrap probabilities, indexed in row order within each group.
struct SamplingProbabilities {
    std::vector<double> treated;
    std::vector<double> control;
};

struct WeightDiagnostics {
    double mean = 0.0;
    double variance = 0.0;  // n-1 denominator
    std::size_t oversized_count = 0;
    std::optional<double> oversized_mean;
    double max_weight = 0.0;
    double threshold = kDefaultOversizedThreshold;
};

namespace detail {

inline void check_inputs(std::span<const double> propensity, std::span<const int> treatment) {
    if (propensity.size() != treatment.size())
        throw InvalidArgument("propensity and treatment lengths differ");
    for (std::size_t i = 0; i < propensity.size(); ++i) {
        const double e = propensity[i];
        if (!(e > 0.0 && e < 1.0))
            throw InvalidArgument(fmt::format("propensity {} at row {} is outside (0,1)", e, i));
        if (treatment[i] != 0 && treatment[i] != 1)
            throw InvalidArgument(fmt::format("treatment at row {} is not 0/1", i));
    }
}

// Inverse inclusion probability of a row in its own group.
inline double inverse_inclusion(double e, int treated) noexcept { return treated ? 1.0 / e : 1.0 / (1.0 - e); }

}  // namespace detail

inline WeightSet iptw_weights(std::span<const double> propensity, std::span<const int> treatment) {
    detail::check_inputs(propensity, treatment);
    WeightSet w;
    w.kind = WeightKind::iptw;
    w.group.assign(treatment.begin(), treatment.end());
    w.weight.resize(propensity.size());
    for (std::size_t i = 0; i < propensity.size(); ++i)
        w.weight[i] = detail::inverse_inclusion(propensity[i], treatment[i]);
    return w;
}

// One threshold over both groups.
inline WeightSet trim_weights(const WeightSet& w, double threshold) {
    if (!(threshold > 0.0)) throw InvalidArgument("trim threshold must be positive");
    WeightSet out = w;
    out.kind = WeightKind::trimmed;
    out.trim_threshold = threshold;
    for (double& x : out.weight) x = std::min(x, threshold);
    return out;
}

inline SamplingProbabilities gb_sampling_probabilities(std::span<const double> propensity,
                                                       std::span<const int> treatment) {
    detail::check_inputs(propensity, treatment);
    SamplingProbabilities probs;
    double sum_t = 0.0, sum_c = 0.0;
    for (std::size_t i = 0; i < propensity.size(); ++i) {
        const double inv = detail::inverse_inclusion(propensity[i], treatment[i]);
        if (treatment[i]) {
            probs.treated.push_back(inv);
            sum_t += inv;
        } else {
            probs.control.push_back(inv);
            sum_c += inv;
        }
    }
    if (probs.treated.empty() || probs.control.empty())
        throw InvalidArgument("sampling probabilities need at least one treated and one control row");
    for (double& p : probs.treated) p /= sum_t;
    for (double& q : probs.control) q /= sum_c;
    return probs;
}

// GB objective weight per occurrence divided by the IPTW weight:
// r_i = (mean over the group of inverse inclusion probabilities) * e_i^2 for treated,
// and the same with (1 - e) for control.
inline std::vector<double> shrinkage_ratio(std::span<const double> propensity, std::span<const int> treatment) {
    detail::check_inputs(propensity, treatment);
    double sum_t = 0.0, sum_c = 0.0;
    std::size_t n_t = 0, n_c = 0;
    for (std::size_t i = 0; i < propensity.size(); ++i) {
        const double inv = detail::inverse_inclusion(propensity[i], treatment[i]);
        if (treatment[i]) {
            sum_t += inv;
            ++n_t;
        } else {
            sum_c += inv;
            ++n_c;
        }
    }
    std::vector<double> r(propensity.size());
    for (std::size_t i = 0; i < propensity.size(); ++i) {
        const double inclusion = treatment[i] ? propensity[i] : 1.0 - propensity[i];
        const double mean_inv = treatment[i] ? sum_t / static_cast<double>(n_t) : sum_c / static_cast<double>(n_c);
        r[i] = mean_inv * inclusion * inclusion;
    }
    return r;
}

// Per-occurrence GB objective weight 1/(n_t p_i) or 1/(n_c q_j), in row order.
inline WeightSet gb_objective_weights(std::span<const double> propensity, std::span<const int> treatment) {
    const auto probs = gb_sampling_probabilities(propensity, treatment);
    WeightSet w;
    w.kind = WeightKind::gb_objective;
    w.group.assign(treatment.begin(), treatment.end());
    w.weight.resize(propensity.size());
    const auto n_t = static_cast<double>(probs.treated.size());
    const auto n_c = static_cast<double>(probs.control.size());
    std::size_t it = 0, ic = 0;
    for (std::size_t i = 0; i < propensity.size(); ++i)
        w.weight[i] = treatment[i] ? 1.0 / (n_t * probs.treated[it++]) : 1.0 / (n_c * probs.control[ic++]);
    return w;
}

inline WeightDiagnostics weight_diagnostics(std::span<const double> w, double threshold = kDefaultOversizedThreshold) {
    if (w.empty()) throw InvalidArgument("weight_diagnostics needs at least one weight");
    WeightDiagnostics d;
    d.threshold = threshold;
    const auto n = static_cast<double>(w.size());
    double sum = 0.0, over_sum = 0.0;
    d.max_weight = -std::numeric_limits<double>::infinity();
    for (double x : w) {
        sum += x;
        d.max_weight = std::max(d.max_weight, x);
        if (x > threshold) {
            ++d.oversized_count;
            over_sum += x;
        }
    }
    d.mean = sum / n;
    double ss = 0.0;
    for (double x : w) ss += (x - d.mean) * (x - d.mean);
    d.variance = w.size() > 1 ? ss / (n - 1.0) : 0.0;
    if (d.oversized_count > 0) d.oversized_mean = over_sum / static_cast<double>(d.oversized_count);
    return d;
}

inline WeightDiagnostics weight_diagnostics(const WeightSet& w, double threshold = kDefaultOversizedThreshold) {
    return weight_diagnostics(std::span<const double>(w.weight), threshold);
}

inline std::string diagnostics_csv_header() { return "kind,mean,variance,oversized_count,oversized_mean,max,threshold"; }

// Empty oversized_mean field when no weight exceeds the threshold.
inline std::string diagnostics_csv_row(const std::string& kind, const WeightDiagnostics& d) {
    return fmt::format("{},{:.6f},{:.6f},{},{},{:.6f},{:.6f}", kind, d.mean, d.variance, d.oversized_count,
                       d.oversized_mean ? fmt::format("{:.6f}", *d.oversized_mean) : std::string{}, d.max_weight,
                       d.threshold);
}

}  // namespace genboot::weights

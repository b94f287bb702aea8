#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "genboot/bootstrap.hpp"
#include "genboot/dataset.hpp"
#include "genboot/error.hpp"
#include "genboot/model.hpp"
#include "genboot/rng.hpp"
#include "genboot/weights.hpp"

namespace genboot::analyze {

struct EmpiricalSchema {
    std::string treatment = "catholic";
    std::string outcome = "math12";
    std::string pretest = "math8";
    std::string income = "faminc8";
    int income_exclusion_from = 13;  // categories >= this are dropped (over $75,000)
};

struct LoadSummary {
    std::size_t rows_read = 0;
    std::size_t rows_missing = 0;   // listwise-deleted for a missing required field
    std::size_t rows_excluded = 0;  // dropped by the income rule
    std::size_t rows_retained = 0;
};

struct EmpiricalData {
    Dataset data;
    LoadSummary summary;
};

namespace detail {

// One CSV record; double quotes may wrap fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "." || s == "NaN"; }

inline double parse_number(const std::string& s, std::size_t row, const std::string& field) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) throw UnparseableRow(row, field, "'" + s + "' is not a number");
    return v;
}

}  // namespace detail

// Drops rows whose income category is at or above the cutoff. Idempotent.
inline Dataset apply_income_exclusion(const Dataset& d, const EmpiricalSchema& schema) {
    const auto income = d.column(schema.income);
    Dataset out;
    out.treatment_name = d.treatment_name;
    out.outcome_name = d.outcome_name;
    out.covariate_names = d.covariate_names;
    out.covariates.resize(d.covariates.size());
    for (std::size_t i = 0; i < d.n_rows(); ++i) {
        if (income[i] >= schema.income_exclusion_from) continue;
        out.treatment.push_back(d.treatment[i]);
        out.outcome.push_back(d.outcome[i]);
        for (std::size_t c = 0; c < d.covariates.size(); ++c) out.covariates[c].push_back(d.covariates[c][i]);
    }
    return out;
}

inline EmpiricalData parse_empirical(std::istream& in, const EmpiricalSchema& schema = {}) {
    std::string line;
    if (!std::getline(in, line)) throw EmptyAfterFilter("input has no header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    auto find = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn(name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_treat = find(schema.treatment);
    const std::size_t c_out = find(schema.outcome);
    const std::size_t c_pre = find(schema.pretest);
    const std::size_t c_inc = find(schema.income);

    EmpiricalData result;
    Dataset& d = result.data;
    d.treatment_name = schema.treatment;
    d.outcome_name = schema.outcome;
    std::vector<double> pretest, income;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++row;
        ++result.summary.rows_read;
        const auto fields = detail::split_csv_line(line);
        auto get = [&](std::size_t c) { return c < fields.size() ? detail::trim(fields[c]) : std::string{}; };
        const std::string f_treat = get(c_treat), f_out = get(c_out), f_pre = get(c_pre), f_inc = get(c_inc);
        if (detail::is_missing(f_treat) || detail::is_missing(f_out) || detail::is_missing(f_pre) ||
            detail::is_missing(f_inc)) {
            ++result.summary.rows_missing;
            continue;
        }
        const double w = detail::parse_number(f_treat, row, schema.treatment);
        if (w != 0.0 && w != 1.0) throw UnparseableRow(row, schema.treatment, "treatment must be 0 or 1");
        const double inc = detail::parse_number(f_inc, row, schema.income);
        if (inc != std::floor(inc) || inc < 1 || inc > 15)
            throw UnparseableRow(row, schema.income, "income category must be an integer in [1, 15]");
        const double y = detail::parse_number(f_out, row, schema.outcome);
        const double x = detail::parse_number(f_pre, row, schema.pretest);
        if (inc >= schema.income_exclusion_from) {
            ++result.summary.rows_excluded;
            continue;
        }
        d.treatment.push_back(static_cast<int>(w));
        d.outcome.push_back(y);
        pretest.push_back(x);
        income.push_back(inc);
    }
    d.add_covariate(schema.pretest, std::move(pretest));
    d.add_covariate(schema.income, std::move(income));
    result.summary.rows_retained = d.n_rows();
    if (d.n_rows() == 0) throw EmptyAfterFilter("no rows left after exclusion and missing-data filtering");
    return result;
}

inline EmpiricalData load_empirical(const std::string& path, const EmpiricalSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open data file '" + path + "'");
    return parse_empirical(in, schema);
}

// Both models use pretest, income and their product.
inline ColumnSpec empirical_ps_formula(const EmpiricalSchema& s) {
    ColumnSpec spec;
    spec.terms = {Term{{s.pretest}}, Term{{s.income}}, Term{{s.pretest, s.income}}};
    return spec;
}

inline ColumnSpec empirical_outcome_formula(const EmpiricalSchema& s) {
    ColumnSpec spec;
    spec.terms = {Term{{s.treatment}}, Term{{s.pretest}}, Term{{s.income}}, Term{{s.pretest, s.income}}};
    return spec;
}

struct Histogram {
    std::string group;
    std::string variable;
    double low = 0.0;
    double high = 1.0;
    std::vector<std::size_t> counts;

    double bin_low(std::size_t b) const { return low + (high - low) * static_cast<double>(b) / static_cast<double>(counts.size()); }
    double bin_high(std::size_t b) const { return low + (high - low) * static_cast<double>(b + 1) / static_cast<double>(counts.size()); }
};

// Equal-width bins on [low, high]; the last bin is closed on the right.
inline Histogram make_histogram(std::string group, std::string variable, const std::vector<double>& values, double low,
                                double high, std::size_t bins = 30) {
    Histogram h{std::move(group), std::move(variable), low, high, std::vector<std::size_t>(bins, 0)};
    const double width = (high - low) / static_cast<double>(bins);
    for (double v : values) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>(std::floor((v - low) / width)) : 0;
        b = std::min(b, bins - 1);
        ++h.counts[b];
    }
    return h;
}

inline std::string histograms_csv(const std::vector<Histogram>& hs) {
    std::string out = "group,variable,bin_low,bin_high,count\n";
    for (const auto& h : hs)
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            out += fmt::format("{},{},{:.6f},{:.6f},{}\n", h.group, h.variable, h.bin_low(b), h.bin_high(b), h.counts[b]);
    return out;
}

struct GroupWeights {
    std::string group;  // "treated" / "control"
    std::size_t rows = 0;
    weights::WeightDiagnostics diagnostics;
    double gb_prob_min = 0.0;
    double gb_prob_max = 0.0;
    bool gb_uniform = false;
};

struct WeightReport {
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
    double control_share = 0.0;
    model::LogisticFit propensity_fit;
    weights::WeightDiagnostics overall;
    std::vector<GroupWeights> groups;
    std::vector<Histogram> histograms;
};

struct EmpiricalConfig {
    std::vector<bootstrap::Method> methods = {bootstrap::Method::GB, bootstrap::Method::OB, bootstrap::Method::TB};
    int replicates = 1000;
    double trim_threshold = weights::kDefaultOversizedThreshold;
    double oversized_threshold = weights::kDefaultOversizedThreshold;
    bool refit_propensity = false;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::size_t histogram_bins = 30;
};

struct AnalysisReport {
    LoadSummary load;
    WeightReport weights;
    std::vector<bootstrap::BootstrapResult> results;
};

inline std::uint64_t method_seed(std::uint64_t seed, bootstrap::Method m) {
    return rng::derive(seed, rng::tag(std::string("bootstrap:") + bootstrap::to_string(m)));
}

inline WeightReport weight_report(const Dataset& data, const ColumnSpec& ps_spec, double oversized_threshold = 20.0,
                                  std::size_t bins = 30) {
    data.validate();
    WeightReport r;
    r.n_treated = data.n_treated();
    r.n_control = data.n_control();
    r.control_share = static_cast<double>(r.n_control) / static_cast<double>(data.n_rows());
    r.propensity_fit = bootstrap::fit_propensity(data, ps_spec);
    const auto& e = r.propensity_fit.fitted_propensity;
    const auto iptw = weights::iptw_weights(e, data.treatment);
    const auto probs = weights::gb_sampling_probabilities(e, data.treatment);
    r.overall = weights::weight_diagnostics(iptw, oversized_threshold);

    const double w_max = r.overall.max_weight;
    for (int g : {1, 0}) {
        GroupWeights gw;
        gw.group = g ? "treated" : "control";
        const auto w = iptw.of_group(g);
        gw.rows = w.size();
        gw.diagnostics = weights::weight_diagnostics(w, oversized_threshold);
        const auto& p = g ? probs.treated : probs.control;
        gw.gb_prob_min = *std::min_element(p.begin(), p.end());
        gw.gb_prob_max = *std::max_element(p.begin(), p.end());
        gw.gb_uniform = gw.gb_prob_max - gw.gb_prob_min <= 1e-9 * gw.gb_prob_max;
        r.groups.push_back(gw);

        std::vector<double> eg;
        for (std::size_t i = 0; i < e.size(); ++i)
            if (data.treatment[i] == g) eg.push_back(e[i]);
        r.histograms.push_back(make_histogram(gw.group, "propensity", eg, 0.0, 1.0, bins));
        r.histograms.push_back(make_histogram(gw.group, "iptw_weight", w, 0.0, w_max, bins));
    }
    return r;
}

inline AnalysisReport run_empirical(const EmpiricalData& input, const EmpiricalConfig& cfg,
                                    const EmpiricalSchema& schema = {}) {
    const Dataset& data = input.data;
    const auto ps = empirical_ps_formula(schema);
    const auto outcome = empirical_outcome_formula(schema);
    AnalysisReport report;
    report.load = input.summary;
    report.weights = weight_report(data, ps, cfg.oversized_threshold, cfg.histogram_bins);
    for (auto m : cfg.methods) {
        bootstrap::BootstrapConfig bc;
        bc.method = m;
        bc.replicates = cfg.replicates;
        bc.trim_threshold = cfg.trim_threshold;
        bc.refit_propensity = cfg.refit_propensity;
        bc.master_seed = method_seed(cfg.seed, m);
        const bootstrap::BootstrapPlan plan(data, report.weights.propensity_fit.fitted_propensity, outcome, bc, ps);
        report.results.push_back(bootstrap::run_plan(plan, cfg.threads));
    }
    return report;
}

inline nlohmann::json to_json(const weights::WeightDiagnostics& d) {
    nlohmann::json j = {{"mean", d.mean},
                        {"variance", d.variance},
                        {"oversized_count", d.oversized_count},
                        {"max", d.max_weight},
                        {"threshold", d.threshold}};
    j["oversized_mean"] = d.oversized_mean ? nlohmann::json(*d.oversized_mean) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const WeightReport& r) {
    nlohmann::json j;
    j["n_treated"] = r.n_treated;
    j["n_control"] = r.n_control;
    j["control_share"] = r.control_share;
    j["propensity_model"] = {{"coefficients", std::vector<double>(r.propensity_fit.coefficients.begin(),
                                                                  r.propensity_fit.coefficients.end())},
                             {"converged", r.propensity_fit.converged},
                             {"separation_detected", r.propensity_fit.separation_detected},
                             {"iterations", r.propensity_fit.iterations},
                             {"log_likelihood", r.propensity_fit.log_likelihood}};
    j["iptw_overall"] = to_json(r.overall);
    for (const auto& g : r.groups)
        j["groups"][g.group] = {{"rows", g.rows},
                                {"iptw", to_json(g.diagnostics)},
                                {"gb_probability", {{"min", g.gb_prob_min}, {"max", g.gb_prob_max}, {"uniform", g.gb_uniform}}}};
    for (const auto& h : r.histograms)
        j["histograms"].push_back({{"group", h.group}, {"variable", h.variable}, {"low", h.low}, {"high", h.high}, {"counts", h.counts}});
    return j;
}

inline nlohmann::json to_json(const AnalysisReport& r) {
    nlohmann::json j;
    j["rows"] = {{"read", r.load.rows_read},
                 {"missing", r.load.rows_missing},
                 {"excluded_income", r.load.rows_excluded},
                 {"retained", r.load.rows_retained}};
    j["weights"] = to_json(r.weights);
    j["results"] = nlohmann::json::array();
    for (const auto& b : r.results) j["results"].push_back(bootstrap::to_json(b));
    return j;
}

}  // namespace genboot::analyze

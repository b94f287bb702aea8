#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "genboot/error.hpp"

namespace genboot {

// Rows of (treatment, outcome, covariates). Only base columns are stored;
// products such as X*Z or Z^2 are built by ColumnSpec when a design is assembled.
struct Dataset {
    std::string treatment_name = "W";
    std::string outcome_name = "Y";
    std::vector<int> treatment;
    std::vector<double> outcome;
    std::vector<std::string> covariate_names;
    std::vector<std::vector<double>> covariates;

    std::size_t n_rows() const noexcept { return treatment.size(); }

    std::size_t n_treated() const noexcept {
        return static_cast<std::size_t>(std::count(treatment.begin(), treatment.end(), 1));
    }
    std::size_t n_control() const noexcept { return n_rows() - n_treated(); }

    void add_covariate(std::string name, std::vector<double> values) {
        covariate_names.push_back(std::move(name));
        covariates.push_back(std::move(values));
    }

    bool has_column(const std::string& name) const {
        return name == treatment_name || name == outcome_name ||
               std::find(covariate_names.begin(), covariate_names.end(), name) != covariate_names.end();
    }

    // Numeric view of any base column. Treatment is exposed as 0.0/1.0.
    std::vector<double> column(const std::string& name) const {
        if (name == treatment_name) return {treatment.begin(), treatment.end()};
        if (name == outcome_name) return outcome;
        auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
        if (it == covariate_names.end()) throw MissingColumn(name);
        return covariates[static_cast<std::size_t>(it - covariate_names.begin())];
    }

    std::vector<std::size_t> treated_rows() const { return rows_with(1); }
    std::vector<std::size_t> control_rows() const { return rows_with(0); }

    // Throws InvalidArgument when the estimation invariants do not hold.
    void validate() const {
        const std::size_t n = n_rows();
        if (outcome.size() != n) throw InvalidArgument("outcome length does not match treatment length");
        if (covariates.size() != covariate_names.size())
            throw InvalidArgument("covariate names and columns disagree");
        for (std::size_t c = 0; c < covariates.size(); ++c) {
            if (covariates[c].size() != n)
                throw InvalidArgument("covariate '" + covariate_names[c] + "' has wrong length");
            for (double v : covariates[c])
                if (!std::isfinite(v)) throw InvalidArgument("covariate '" + covariate_names[c] + "' is not finite");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (treatment[i] != 0 && treatment[i] != 1)
                throw InvalidArgument("treatment must be 0 or 1 (row " + std::to_string(i) + ")");
            if (!std::isfinite(outcome[i])) throw InvalidArgument("outcome is not finite (row " + std::to_string(i) + ")");
        }
        if (n_treated() < 2 || n_control() < 2)
            throw InvalidArgument("each treatment arm needs at least two rows (n_t=" + std::to_string(n_treated()) +
                                  ", n_c=" + std::to_string(n_control()) + ")");
    }

private:
    std::vector<std::size_t> rows_with(int value) const {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < treatment.size(); ++i)
            if (treatment[i] == value) rows.push_back(i);
        return rows;
    }
};

// A regression term: the product of one or more base columns ({"X"}, {"X","Z"}, {"Z","Z"}).
struct Term {
    std::vector<std::string> factors;

    std::string name() const {
        std::string out;
        for (std::size_t i = 0; i < factors.size(); ++i) {
            if (i) out += ':';
            out += factors[i];
        }
        return out;
    }
    bool operator==(const Term&) const = default;
};

struct ColumnSpec {
    std::vector<Term> terms;
    bool intercept = true;

    std::size_t n_columns() const noexcept { return terms.size() + (intercept ? 1 : 0); }

    std::vector<std::string> column_names() const {
        std::vector<std::string> names;
        if (intercept) names.emplace_back("(Intercept)");
        for (const auto& t : terms) names.push_back(t.name());
        return names;
    }

    // Design-matrix column index of a single-factor term, or npos.
    std::size_t column_of(const std::string& base) const {
        for (std::size_t j = 0; j < terms.size(); ++j)
            if (terms[j].factors.size() == 1 && terms[j].factors[0] == base) return j + (intercept ? 1 : 0);
        return npos;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Parses "X + Z + X:Z + Z:Z" (spaces optional). Intercept always included.
inline ColumnSpec parse_formula(const std::string& text) {
    ColumnSpec spec;
    std::string token;
    auto flush = [&] {
        Term term;
        std::string factor;
        for (char c : token) {
            if (c == ':' || c == '*') {
                if (factor.empty()) throw ConfigError("empty factor in formula '" + text + "'");
                term.factors.push_back(factor);
                factor.clear();
            } else {
                factor += c;
            }
        }
        if (factor.empty()) throw ConfigError("empty term in formula '" + text + "'");
        term.factors.push_back(factor);
        spec.terms.push_back(std::move(term));
        token.clear();
    };
    for (char c : text) {
        if (c == ' ' || c == '\t') continue;
        if (c == '+') {
            flush();
        } else {
            token += c;
        }
    }
    if (!token.empty()) flush();
    if (spec.terms.empty()) throw ConfigError("formula has no terms");
    return spec;
}

inline Eigen::MatrixXd build_design(const Dataset& data, const ColumnSpec& spec) {
    const auto n = static_cast<Eigen::Index>(data.n_rows());
    Eigen::MatrixXd design(n, static_cast<Eigen::Index>(spec.n_columns()));
    Eigen::Index col = 0;
    if (spec.intercept) design.col(col++).setOnes();
    for (const auto& term : spec.terms) {
        design.col(col).setOnes();
        for (const auto& factor : term.factors) {
            if (!data.has_column(factor)) throw MissingColumn(factor);
            const auto values = data.column(factor);
            design.col(col).array() *= Eigen::Map<const Eigen::ArrayXd>(values.data(), n);
        }
        ++col;
    }
    return design;
}

inline void check_spec(const Dataset& data, const ColumnSpec& spec) {
    for (const auto& term : spec.terms)
        for (const auto& f : term.factors)
            if (!data.has_column(f)) throw MissingColumn(f);
}

}  // namespace genboot

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "genboot/error.hpp"

namespace genboot::model {

inline constexpr double kPropensityClamp = 1e-6;
inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kSeparationEta = 30.0;

struct LogisticOptions {
    int max_iter = 50;
    double tol = 1e-8;  // max absolute coefficient change
    double clamp = kPropensityClamp;
};

struct LogisticFit {
    Eigen::VectorXd coefficients;  // intercept first when the design has one
    std::vector<double> fitted_propensity;
    bool converged = false;
    bool separation_detected = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    std::vector<double> log_likelihood_trace;  // one entry per accepted iterate, starting at beta = 0
};

struct CoefficientFit {
    Eigen::VectorXd coefficients;
    double residual_sum = 0.0;  // sum of w * (y - x'theta)^2
};

namespace detail {

inline double softplus(double x) noexcept {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double inv_logit(double x) noexcept {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline std::string column_name(std::span<const std::string> names, Eigen::Index j) {
    if (j >= 0 && static_cast<std::size_t>(j) < names.size()) return names[static_cast<std::size_t>(j)];
    return "column " + std::to_string(j);
}

// Pivoted QR; throws RankDeficientDesign naming the first column pivoted out.
inline Eigen::ColPivHouseholderQR<Eigen::MatrixXd> factor_full_rank(const Eigen::MatrixXd& a,
                                                                    std::span<const std::string> names) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a.rows(), a.cols());
    qr.setThreshold(kRankTolerance);
    qr.compute(a);
    if (qr.rank() < a.cols()) {
        const Eigen::Index offending = qr.colsPermutation().indices()(qr.rank());
        throw RankDeficientDesign(column_name(names, offending));
    }
    return qr;
}

inline double log_likelihood(const Eigen::VectorXd& eta, std::span<const double> y, std::span<const double> prior) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double w = prior.empty() ? 1.0 : prior[k];
        if (w == 0.0) continue;
        ll += w * (y[k] * eta(i) - softplus(eta(i)));
    }
    return ll;
}

}  // namespace detail

// Weighted least squares: argmin sum_k w_k (y_k - x_k' theta)^2, solved by a
// column-pivoted Householder QR of the sqrt(w)-scaled design. Rows with zero
// weight are dropped before factoring.
inline CoefficientFit weighted_least_squares(const Eigen::MatrixXd& design, std::span<const double> response,
                                             std::span<const double> weights,
                                             std::span<const std::string> column_names = {}) {
    const auto n = design.rows();
    const auto p = design.cols();
    if (static_cast<std::size_t>(n) != response.size() || static_cast<std::size_t>(n) != weights.size())
        throw InvalidArgument("weighted_least_squares: design, response and weights disagree in length");

    Eigen::Index positive = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = weights[static_cast<std::size_t>(i)];
        if (!std::isfinite(w) || w < 0.0) throw NegativeWeight(static_cast<std::size_t>(i), w);
        if (w > 0.0) ++positive;
    }
    if (positive < p) throw RankDeficientDesign(detail::column_name(column_names, positive));

    std::vector<Eigen::Index> rows;
    rows.reserve(static_cast<std::size_t>(positive));
    Eigen::VectorXd root(positive);
    Eigen::VectorXd rhs(positive);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = weights[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        const auto r = static_cast<Eigen::Index>(rows.size());
        root(r) = std::sqrt(w);
        rhs(r) = root(r) * response[static_cast<std::size_t>(i)];
        rows.push_back(i);
    }
    Eigen::MatrixXd scaled(positive, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index r = 0; r < positive; ++r) scaled(r, j) = root(r) * design(rows[static_cast<std::size_t>(r)], j);
    const auto qr = detail::factor_full_rank(scaled, column_names);
    CoefficientFit fit;
    fit.coefficients = qr.solve(rhs);
    fit.residual_sum = (scaled * fit.coefficients - rhs).squaredNorm();
    return fit;
}

// Logistic MLE by iteratively reweighted least squares with step halving, so the
// log-likelihood trace never decreases. `prior_weights` (optional) are frequency
// weights; rows with weight 0 are ignored.
inline LogisticFit fit_logistic(const Eigen::MatrixXd& design, std::span<const double> response,
                                const LogisticOptions& options = {}, std::span<const double> prior_weights = {},
                                std::span<const std::string> column_names = {}) {
    const auto n = design.rows();
    const auto p = design.cols();
    if (static_cast<std::size_t>(n) != response.size())
        throw InvalidArgument("fit_logistic: design and response disagree in length");
    if (!prior_weights.empty() && prior_weights.size() != response.size())
        throw InvalidArgument("fit_logistic: prior weights have wrong length");

    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < response.size(); ++i) {
        const double w = prior_weights.empty() ? 1.0 : prior_weights[i];
        if (!std::isfinite(w) || w < 0.0) throw NegativeWeight(i, w);
        if (w == 0.0) continue;
        if (response[i] == 0.0) has0 = true;
        else if (response[i] == 1.0) has1 = true;
        else throw InvalidArgument("fit_logistic: response must be 0/1");
    }
    if (!has0 || !has1) throw InvalidArgument("fit_logistic: response needs at least one 0 and one 1");

    {
        // Rank check on the rows that carry weight.
        std::vector<double> unit(response.size());
        for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = prior_weights.empty() ? 1.0 : prior_weights[i];
        Eigen::Index positive = std::count_if(unit.begin(), unit.end(), [](double w) { return w > 0.0; });
        if (positive < p) throw RankDeficientDesign(detail::column_name(column_names, positive));
        Eigen::MatrixXd a(positive, p);
        for (Eigen::Index i = 0, r = 0; i < n; ++i)
            if (unit[static_cast<std::size_t>(i)] > 0.0) a.row(r++) = std::sqrt(unit[static_cast<std::size_t>(i)]) * design.row(i);
        detail::factor_full_rank(a, column_names);
    }

    LogisticFit fit;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
    double ll = detail::log_likelihood(eta, response, prior_weights);
    fit.log_likelihood_trace.push_back(ll);

    double prev_step = 0.0;
    int not_shrinking = 0;
    Eigen::MatrixXd a(n, p);
    Eigen::VectorXd b(n);
    for (int iter = 1; iter <= options.max_iter; ++iter) {
        fit.iterations = iter;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const double prior = prior_weights.empty() ? 1.0 : prior_weights[k];
            const double mu = detail::inv_logit(eta(i));
            const double var = std::max(mu * (1.0 - mu), 1e-12);
            const double s = std::sqrt(prior * var);
            a.row(i) = s * design.row(i);
            b(i) = s == 0.0 ? 0.0 : prior * (response[k] - mu) / s;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
        const Eigen::VectorXd delta = qr.solve(b);

        double t = 1.0;
        Eigen::VectorXd trial_beta, trial_eta;
        double trial_ll = ll;
        bool accepted = false;
        for (int halve = 0; halve < 40; ++halve, t *= 0.5) {
            trial_beta = beta + t * delta;
            trial_eta = design * trial_beta;
            trial_ll = detail::log_likelihood(trial_eta, response, prior_weights);
            if (std::isfinite(trial_ll) && trial_ll >= ll) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // No ascent direction left at working precision.
            fit.converged = delta.cwiseAbs().maxCoeff() < std::sqrt(options.tol);
            break;
        }
        const double step = (t * delta).cwiseAbs().maxCoeff();
        beta = trial_beta;
        eta = trial_eta;
        ll = trial_ll;
        fit.log_likelihood_trace.push_back(ll);

        if (step < options.tol) {
            fit.converged = true;
            break;
        }
        const double max_eta = eta.cwiseAbs().maxCoeff();
        if (max_eta > kSeparationEta && iter > 1 && step >= 0.5 * prev_step) {
            if (++not_shrinking >= 3) {
                fit.separation_detected = true;
                break;
            }
        } else {
            not_shrinking = 0;
        }
        prev_step = step;
    }
    if (!fit.converged && eta.size() > 0 && eta.cwiseAbs().maxCoeff() > kSeparationEta) fit.separation_detected = true;
    if (fit.separation_detected) fit.converged = false;

    fit.coefficients = beta;
    fit.log_likelihood = ll;
    fit.fitted_propensity.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        fit.fitted_propensity[static_cast<std::size_t>(i)] =
            std::clamp(detail::inv_logit(eta(i)), options.clamp, 1.0 - options.clamp);
    return fit;
}

// Propensities for a design under given coefficients (used when scoring rows
// that were not part of a refit).
inline std::vector<double> predict_propensity(const Eigen::MatrixXd& design, const Eigen::VectorXd& coefficients,
                                              double clamp = kPropensityClamp) {
    const Eigen::VectorXd eta = design * coefficients;
    std::vector<double> e(static_cast<std::size_t>(eta.size()));
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        e[static_cast<std::size_t>(i)] = std::clamp(detail::inv_logit(eta(i)), clamp, 1.0 - clamp);
    return e;
}

}  // namespace genboot::model

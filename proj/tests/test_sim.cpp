#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "genboot/model.hpp"
#include "genboot/sim.hpp"

using namespace genboot;
using namespace genboot::sim;
using bootstrap::Method;

TEST(TrueSe, Examples) {
    const std::vector<double> flat(10, 2.0);
    // MSE - MB^2 cancels to rounding level, leaving about sqrt(eps) * |MB|.
    EXPECT_NEAR(true_se(flat, 1.677), 0.0, 1e-8);
    const std::vector<double> pair = {1.0, 3.0};
    EXPECT_NEAR(true_se(pair, 2.0), 1.0, 1e-12);
    EXPECT_THROW(true_se(std::vector<double>{}), InvalidArgument);
}

TEST(TrueSe, EqualsPopulationSd) {
    std::mt19937_64 gen(17);
    std::normal_distribution<double> nz(1.7, 0.5);
    std::uniform_int_distribution<int> len(1, 300);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> v(static_cast<std::size_t>(len(gen)));
        for (double& x : v) x = nz(gen);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sd_n = std::sqrt(ss / static_cast<double>(v.size()));
        EXPECT_NEAR(true_se(v, 1.677), sd_n, 1e-10);
    }
}

TEST(RelativeEfficiency, Arithmetic) {
    EXPECT_NEAR(relative_efficiency(0.51, 0.62), 0.68, 0.01);
    EXPECT_NEAR(relative_efficiency(0.06, 0.09), 0.44, 0.01);
    EXPECT_DOUBLE_EQ(relative_efficiency(0.3, 0.3), 1.0);
}

TEST(Metrics, HandExample) {
    // Two datasets, beta 1: GB (mean, se) = (1.5, 1.0) and (0.5, 0.2).
    std::vector<DatasetResult> rs(2);
    rs[0].by_method[0] = {1.5, 1.0};
    rs[1].by_method[0] = {0.5, 0.2};
    for (auto& r : rs) r.by_method[1] = r.by_method[2] = r.by_method[0];
    rs[1].by_method[1] = {0.5, 0.6};
    const auto m = scenario_metrics(rs, 1.0);
    const auto& gb = m[Method::GB];
    EXPECT_NEAR(gb.mean_bias, 0.0, 1e-12);
    EXPECT_NEAR(gb.true_se, 0.5, 1e-12);
    EXPECT_NEAR(gb.mean_se, 0.6, 1e-12);
    EXPECT_NEAR(gb.se_of_se, std::sqrt(0.32), 1e-12);
    EXPECT_NEAR(gb.underestimation_proportion, 0.5, 1e-12);  // 0.2 < 0.5
    EXPECT_NEAR(gb.coverage, 0.5, 1e-12);                   // |0.5-1| > 1.96*0.2
    EXPECT_NEAR(m[Method::OB].coverage, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(m[Method::OB].re_point, 1.0);
    EXPECT_DOUBLE_EQ(m[Method::OB].re_se, 1.0);
    EXPECT_NEAR(gb.re_se, 0.32 / 0.08, 1e-12);
}

TEST(Metrics, IdenticalMethodsGiveIdenticalMetrics) {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> nz(1.677, 0.4);
    std::vector<DatasetResult> rs(50);
    for (auto& r : rs) {
        const MethodEstimate e{nz(gen), std::abs(nz(gen)) * 0.3};
        r.by_method = {e, e, e};
    }
    const auto m = scenario_metrics(rs);
    for (auto k : bootstrap::kAllMethods) {
        EXPECT_DOUBLE_EQ(m[k].re_point, 1.0);
        EXPECT_DOUBLE_EQ(m[k].re_se, 1.0);
        EXPECT_DOUBLE_EQ(m[k].true_se, m[Method::OB].true_se);
        EXPECT_GE(m[k].coverage, 0.0);
        EXPECT_LE(m[k].coverage, 1.0);
        EXPECT_GE(m[k].underestimation_proportion, 0.0);
        EXPECT_LE(m[k].underestimation_proportion, 1.0);
    }
}

TEST(Grid, DefaultHasTwentyFourDistinctScenarios) {
    const auto g = default_grid();
    ASSERT_EQ(g.size(), 24u);
    std::set<std::string> labels;
    for (const auto& s : g) labels.insert(s.label());
    EXPECT_EQ(labels.size(), 24u);
    EXPECT_FALSE(g.front().ps_correctly_specified);
    EXPECT_TRUE(g.back().ps_correctly_specified);
}

TEST(Formulas, TermCounts) {
    EXPECT_EQ(propensity_formula(true).terms.size(), 4u);
    EXPECT_EQ(propensity_formula(false).terms.size(), 2u);
    EXPECT_TRUE(propensity_formula(false).intercept);
    const auto out = outcome_formula();
    EXPECT_EQ(out.terms.size(), 4u);
    EXPECT_EQ(out.column_of("W"), 1u);
}

TEST(Generate, DeterministicAndBothArms) {
    ScenarioConfig s;
    const auto a = generate_dataset_seeded(s, 42);
    const auto b = generate_dataset_seeded(s, 42);
    EXPECT_EQ(a.outcome, b.outcome);
    EXPECT_EQ(a.treatment, b.treatment);
    EXPECT_GE(a.n_treated(), kMinArmSize);
    EXPECT_GE(a.n_control(), kMinArmSize);
    for (double z : a.column("Z")) {
        EXPECT_GE(z, 1.0);
        EXPECT_LE(z, 12.0);
        EXPECT_EQ(z, std::round(z));
    }
}

TEST(Generate, SeedIgnoresPsSpecification) {
    ScenarioConfig mis, cor;
    cor.ps_correctly_specified = true;
    EXPECT_EQ(dataset_seed(mis, 5, 3), dataset_seed(cor, 5, 3));
    ScenarioConfig other = mis;
    other.selection_noise_var = 0.3;
    EXPECT_NE(dataset_seed(mis, 5, 3), dataset_seed(other, 5, 3));
}

TEST(Generate, OutcomeModelRecovered) {
    // OLS of Y on the true outcome design recovers beta and Var(u) = 27.4.
    ScenarioConfig s;
    s.sample_size = 40000;
    const auto d = generate_dataset_seeded(s, 8);
    const auto x = build_design(d, outcome_formula());
    const std::vector<double> w(d.n_rows(), 1.0);
    const auto fit = model::weighted_least_squares(x, d.outcome, w);
    const double n = static_cast<double>(d.n_rows());
    const double resid_var = fit.residual_sum / (n - 5.0);
    EXPECT_NEAR(resid_var, kOutcomeNoiseVar, 4.0 * kOutcomeNoiseVar * std::sqrt(2.0 / n));
    EXPECT_NEAR(fit.coefficients(1), kTrueEffect, 0.25);
    EXPECT_NEAR(fit.coefficients(2), 0.9, 0.05);
}

TEST(Generate, IncomeFrequenciesFollowModel) {
    ScenarioConfig s;
    s.sample_size = 50000;
    const auto d = generate_dataset_seeded(s, 9);
    std::vector<double> freq(12, 0.0);
    for (double z : d.column("Z")) freq[static_cast<std::size_t>(z) - 1] += 1.0;
    for (std::size_t k = 0; k < 12; ++k) {
        const double p = s.covariates.z_category_probs[k];
        EXPECT_NEAR(freq[k] / s.sample_size, p, 4.0 * std::sqrt(p * (1 - p) / s.sample_size) + 1e-4);
    }
}

TEST(Study, DeterministicAcrossThreadsAndUnbiasedWithoutConfounding) {
    GridOptions g;
    g.sample_sizes = {1000};
    g.rhos = {0.0};
    g.noise_vars = {1.0};
    g.ps_specs = {false};
    g.base.n_datasets = 40;
    g.base.replicates = 60;
    const auto grid = make_grid(g);
    const auto a = run_study(grid, 11, 1);
    const auto b = run_study(grid, 11, 3);
    EXPECT_EQ(metrics_csv_rows(a[0]), metrics_csv_rows(b[0]));
    EXPECT_EQ(datasets_csv_rows(a[0]), datasets_csv_rows(b[0]));
    for (auto m : bootstrap::kAllMethods) {
        const auto& mm = a[0].metrics[m];
        EXPECT_LE(std::abs(mm.mean_bias), 3.0 * mm.true_se / std::sqrt(40.0)) << bootstrap::to_string(m);
    }
}

TEST(Study, ObserverSeesEveryScenario) {
    GridOptions g;
    g.sample_sizes = {200};
    g.ps_specs = {true};
    g.base.n_datasets = 3;
    g.base.replicates = 20;
    std::vector<std::string> seen;
    std::size_t progress = 0;
    StudyObserver obs;
    obs.on_progress = [&](const ScenarioConfig&, std::size_t, std::size_t) { ++progress; };
    obs.on_scenario = [&](const ScenarioResult& r) { seen.push_back(r.scenario.label()); };
    run_study(make_grid(g), 1, 2, obs);
    EXPECT_EQ(seen.size(), 4u);
    EXPECT_EQ(progress, 12u);
}

TEST(Output, MetricsHeader) {
    EXPECT_EQ(metrics_csv_header(),
              "sample_size,confounding,oversized,ps_spec,method,mean_bias,true_se,mean_se,se_of_se,underest_prop,"
              "coverage,re_point,re_se");
}

TEST(Generate, OversizedWeightLevels) {
    // Single n = 10000 datasets per noise level, misspecified propensity model.
    ScenarioConfig less, more;
    less.sample_size = more.sample_size = 10000;
    more.selection_noise_var = 0.3;
    auto diag = [](const ScenarioConfig& s) {
        const auto d = generate_dataset_seeded(s, dataset_seed(s, 1, 0));
        const auto fit = bootstrap::fit_propensity(d, propensity_formula(false));
        return weights::weight_diagnostics(weights::iptw_weights(fit.fitted_propensity, d.treatment));
    };
    const auto dl = diag(less), dm = diag(more);
    EXPECT_NEAR(dl.mean, 2.0, 0.15);
    EXPECT_GT(dl.oversized_count, 10u);
    EXPECT_LT(dl.oversized_count, 150u);
    EXPECT_GT(dm.oversized_count, dl.oversized_count);
    EXPECT_GT(dm.variance, dl.variance);
    EXPECT_GE(dm.max_weight, 1e2);  // order 10^3
    EXPECT_LT(dm.max_weight, 1e4);
    std::cout << fmt::format("less: mean {:.3f} var {:.2f} oversized {} max {:.1f}; more: mean {:.3f} var {:.2f} "
                             "oversized {} max {:.1f}\n",
                             dl.mean, dl.variance, dl.oversized_count, dl.max_weight, dm.mean, dm.variance,
                             dm.oversized_count, dm.max_weight);
}

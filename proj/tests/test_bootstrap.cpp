#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "genboot/bootstrap.hpp"
#include "oracles.hpp"

using namespace genboot;
using namespace genboot::bootstrap;

namespace {

Dataset small_dataset(std::vector<int> t, std::vector<double> y) {
    Dataset d;
    d.treatment = std::move(t);
    d.outcome = std::move(y);
    return d;
}

Dataset random_dataset(std::size_t n, std::uint64_t seed, std::vector<double>& propensity) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nz(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Dataset d;
    std::vector<double> x(n);
    propensity.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = nz(gen);
        propensity[i] = 1.0 / (1.0 + std::exp(-(-1.0 + 1.2 * x[i])));
        d.treatment.push_back(u(gen) < propensity[i] ? 1 : 0);
        d.outcome.push_back(1.0 + 2.0 * d.treatment.back() + x[i] + nz(gen));
    }
    d.add_covariate("X", x);
    return d;
}

BootstrapConfig config_for(Method m, int b = 200, std::uint64_t seed = 3) {
    BootstrapConfig c;
    c.method = m;
    c.replicates = b;
    c.master_seed = seed;
    return c;
}

}  // namespace

TEST(Multinomial, DegenerateAndSupport) {
    auto eng = rng::make_engine(1);
    const std::vector<double> p = {1, 0, 0};
    EXPECT_EQ(multinomial_counts(p, 7, eng), (std::vector<int>{7, 0, 0}));
    const std::vector<double> q = {0.2, 0.0, 0.5, 0.3};
    for (int rep = 0; rep < 1000; ++rep) {
        const auto k = multinomial_counts(q, 13, eng);
        EXPECT_EQ(std::accumulate(k.begin(), k.end(), 0), 13);
        EXPECT_EQ(k[1], 0);
    }
    std::vector<double> bad = {0.5, 0.6};
    EXPECT_THROW(multinomial_counts(bad, 3, eng), InvalidArgument);
}

TEST(Multinomial, MomentsAndChiSquare) {
    auto eng = rng::make_engine(2024);
    const std::vector<double> p = {0.6, 0.3, 0.1};
    const int draws = 20000, size = 10;
    std::vector<double> total(3, 0.0);
    for (int d = 0; d < draws; ++d) {
        const auto k = multinomial_counts(p, size, eng);
        for (std::size_t c = 0; c < 3; ++c) total[c] += k[c];
    }
    double chi2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = total[c] / draws, expect = size * p[c];
        const double se = std::sqrt(size * p[c] * (1.0 - p[c]) / draws);
        EXPECT_LT(std::abs(mean - expect), 3.0 * se) << "category " << c;
        const double e_total = expect * draws;
        chi2 += (total[c] - e_total) * (total[c] - e_total) / e_total;
    }
    EXPECT_LT(chi2, 13.815510557964274);  // chi-square(2) upper 0.001 quantile
}

TEST(Methods, ParseAndName) {
    EXPECT_EQ(parse_method("gb"), Method::GB);
    EXPECT_EQ(parse_method("Ob"), Method::OB);
    EXPECT_EQ(parse_method("TB"), Method::TB);
    EXPECT_STREQ(to_string(Method::TB), "TB");
    EXPECT_THROW(parse_method("xb"), ConfigError);
}

TEST(Summarize, SkipsNonFiniteAndUsesSampleSd) {
    const std::vector<double> e = {1.0, NAN, 3.0, 2.0};
    const auto s = summarize(e);
    EXPECT_EQ(s.retained, 3u);
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.se, 1.0);
    EXPECT_DOUBLE_EQ(s.ci_low, 2.0 - 1.96);
    EXPECT_DOUBLE_EQ(s.ci_high, 2.0 + 1.96);
}

TEST(Replicate, GbEqualsObUnderEqualPropensities) {
    std::vector<double> unused;
    const Dataset d = random_dataset(60, 8, unused);
    const std::vector<double> e(d.n_rows(), 0.5);
    const auto spec = parse_formula("W + X");
    const BootstrapPlan gb(d, e, spec, config_for(Method::GB));
    const BootstrapPlan ob(d, e, spec, config_for(Method::OB));
    auto eng = rng::make_engine(5);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<int> kt, kc;
        CategoricalSampler(std::vector<double>(gb.n_treated(), 1.0 / gb.n_treated())).counts(gb.n_treated(), eng, kt);
        CategoricalSampler(std::vector<double>(gb.n_control(), 1.0 / gb.n_control())).counts(gb.n_control(), eng, kc);
        EXPECT_NEAR(gb.estimate_from_counts(kt, kc), ob.estimate_from_counts(kt, kc), 1e-10);
    }
    // Identical streams also give identical draws, since both samplers are uniform.
    auto e1 = rng::make_engine(77), e2 = rng::make_engine(77);
    EXPECT_NEAR(gb.replicate(e1), ob.replicate(e2), 1e-10);
}

TEST(Replicate, TbWithLooseThresholdEqualsOb) {
    std::vector<double> e;
    const Dataset d = random_dataset(80, 9, e);
    const auto spec = parse_formula("W + X");
    auto tb_cfg = config_for(Method::TB);
    tb_cfg.trim_threshold = 1e9;
    const BootstrapPlan tb(d, e, spec, tb_cfg);
    const BootstrapPlan ob(d, e, spec, config_for(Method::OB));
    for (int rep = 0; rep < 20; ++rep) {
        auto a = rng::make_engine(rng::derive(1, rep)), b = rng::make_engine(rng::derive(1, rep));
        EXPECT_DOUBLE_EQ(tb.replicate(a), ob.replicate(b));
    }
}

TEST(Replicate, UnitWeightsPerMethod) {
    const Dataset d = small_dataset({1, 1, 0, 0}, {1, 2, 3, 4});
    const std::vector<double> e = {0.04, 0.6, 0.3, 0.9};
    const auto spec = parse_formula("W");
    const auto ob = BootstrapPlan(d, e, spec, config_for(Method::OB)).unit_weights();
    const auto tb = BootstrapPlan(d, e, spec, config_for(Method::TB)).unit_weights();
    const auto gb = BootstrapPlan(d, e, spec, config_for(Method::GB)).unit_weights();
    EXPECT_NEAR(ob[0], 25.0, 1e-12);
    EXPECT_NEAR(tb[0], 20.0, 1e-12);
    EXPECT_NEAR(ob[3], 10.0, 1e-12);
    // 1/(n_t p_i) = mean(1/e) * e_i
    EXPECT_NEAR(gb[0], (25.0 + 1.0 / 0.6) / 2.0 * 0.04, 1e-12);
    EXPECT_NEAR(gb[3], (1.0 / 0.7 + 10.0) / 2.0 * 0.1, 1e-12);
}

TEST(Replicate, MatchesExhaustiveEnumeration) {
    const std::array<double, 4> y = {3.0, 8.0, 1.0, 2.5};
    const std::array<double, 4> e = {0.04, 0.6, 0.3, 0.9};
    const Dataset d = small_dataset({1, 1, 0, 0}, {y.begin(), y.end()});
    const int B = 20000;
    const std::pair<Method, oracle::Scheme> cases[] = {{Method::GB, oracle::Scheme::generalized},
                                                       {Method::OB, oracle::Scheme::ordinary},
                                                       {Method::TB, oracle::Scheme::trimmed}};
    for (auto [m, scheme] : cases) {
        const auto exact = oracle::exhaustive_two_by_two(scheme, y, e);
        const BootstrapPlan plan(d, std::vector<double>(e.begin(), e.end()), parse_formula("W"), config_for(m, B, 1234));
        const auto r = run_plan(plan, 2);
        EXPECT_EQ(r.n_failed, 0);
        EXPECT_LT(std::abs(r.mean - exact.mean), 3.0 * exact.se_of_mean(B)) << to_string(m);
        EXPECT_LT(std::abs(r.se - exact.sd), 3.0 * exact.se_of_sd(B)) << to_string(m);
    }
}

TEST(RunPlan, ConstantOutcomeGivesZeroSe) {
    std::vector<double> e;
    Dataset d = random_dataset(50, 4, e);
    std::fill(d.outcome.begin(), d.outcome.end(), 3.0);
    for (Method m : kAllMethods) {
        const BootstrapPlan plan(d, e, parse_formula("W + X"), config_for(m, 100));
        const auto r = run_plan(plan);
        for (double x : r.estimates) EXPECT_NEAR(x, 0.0, 1e-10);
        EXPECT_NEAR(r.se, 0.0, 1e-10);
    }
}

TEST(RunPlan, DeterministicAcrossThreadCounts) {
    std::vector<double> e;
    const Dataset d = random_dataset(120, 6, e);
    for (Method m : kAllMethods) {
        const BootstrapPlan plan(d, e, parse_formula("W + X"), config_for(m, 300, 99));
        const auto a = run_plan(plan, 1);
        const auto b = run_plan(plan, 4);
        const auto c = run_plan(plan, 7);
        EXPECT_EQ(a.estimates, b.estimates);
        EXPECT_EQ(a.estimates, c.estimates);
        EXPECT_EQ(to_json(a).dump(), to_json(c).dump());
    }
}

TEST(RunPlan, TooManyDegenerateReplicates) {
    // Three columns but only two distinct rows whenever each group resamples one row.
    const Dataset base = small_dataset({1, 1, 0, 0}, {1, 2, 3, 5});
    Dataset d = base;
    d.add_covariate("X", {0, 1, 0, 1});
    const std::vector<double> e = {0.5, 0.5, 0.5, 0.5};
    const BootstrapPlan plan(d, e, parse_formula("W + X"), config_for(Method::OB, 400));
    EXPECT_THROW(run_plan(plan), TooManyFailures);
}

TEST(RunBootstrap, RefitAndFixedPropensityBothRun) {
    std::vector<double> e;
    const Dataset d = random_dataset(300, 12, e);
    auto cfg = config_for(Method::GB, 100);
    const auto fixed = run_bootstrap(d, parse_formula("X"), parse_formula("W + X"), cfg);
    cfg.refit_propensity = true;
    const auto refit = run_bootstrap(d, parse_formula("X"), parse_formula("W + X"), cfg);
    EXPECT_EQ(fixed.n_failed, 0);
    EXPECT_EQ(refit.n_failed, 0);
    EXPECT_NEAR(fixed.mean, 2.0, 0.6);
    EXPECT_NEAR(refit.mean, 2.0, 0.6);
    EXPECT_NE(fixed.estimates, refit.estimates);
}

TEST(RunBootstrap, RequiresTreatmentInOutcomeFormula) {
    std::vector<double> e;
    const Dataset d = random_dataset(40, 1, e);
    EXPECT_THROW(BootstrapPlan(d, e, parse_formula("X"), config_for(Method::OB)), ConfigError);
}

TEST(Output, EstimatesCsv) {
    BootstrapResult r;
    r.estimates = {0.5, NAN};
    EXPECT_EQ(estimates_csv(r), "estimate\n0.5\nNA\n");
}

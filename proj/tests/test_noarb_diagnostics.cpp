#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bp/errors.hpp"
#include "bp/gop.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/stats.hpp"
#include "oracles.hpp"

using namespace bp;

namespace {

CoefficientSnapshot snapshot(double r, Vector mu, Matrix sigma) {
    CoefficientSnapshot s;
    s.r = r;
    s.mu = std::move(mu);
    s.sigma = std::move(sigma);
    return s;
}

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) {
        v(i++) = x;
    }
    return v;
}

MarketModel one_asset_two_drivers() {
    return builtin_model("custom_multi",
                         {{"N", 1}, {"d", 2}, {"mu", {0.1}}, {"sigma", {{1.0, 0.0}}}, {"r", 0.0}, {"s", {1.0}}});
}

}  // namespace

TEST(MarketPriceOfRisk, BlackScholes) {
    const Vector theta = market_price_of_risk(snapshot(0.02, vec({0.1}), Matrix::Constant(1, 1, 0.2)));
    EXPECT_NEAR(theta(0), 0.4, 1e-15);
}

TEST(MarketPriceOfRisk, ZeroExcessReturn) {
    Matrix sigma(2, 2);
    sigma << 0.3, 0.1, -0.2, 0.5;
    const Vector theta = market_price_of_risk(snapshot(0.05, vec({0.05, 0.05}), sigma));
    EXPECT_EQ(theta.norm(), 0.0);
}

TEST(MarketPriceOfRisk, MinimumNormWithExtraDriver) {
    Matrix sigma(1, 2);
    sigma << 1.0, 1.0;
    const Vector theta = market_price_of_risk(snapshot(0.0, vec({1.0}), sigma));
    EXPECT_NEAR(theta(0), 0.5, 1e-14);
    EXPECT_NEAR(theta(1), 0.5, 1e-14);
}

TEST(MarketPriceOfRisk, RankDeficientNeedsPermission) {
    const auto s = snapshot(0.0, vec({0.1, 0.2}), Matrix::Ones(2, 1));
    EXPECT_THROW(market_price_of_risk(s), ModelError);
    EXPECT_NO_THROW(market_price_of_risk(s, true));
}

TEST(IncreasingProfit, FoundOnInconsistentDrifts) {
    const auto v = detect_increasing_profit(snapshot(0.0, vec({0.1, 0.2}), Matrix::Ones(2, 1)));
    ASSERT_TRUE(v.found);
    EXPECT_NEAR(v.residual(0), -0.05, 1e-12);
    EXPECT_NEAR(v.residual(1), 0.05, 1e-12);
    EXPECT_NEAR(v.residual_norm, 0.05 * std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(std::abs(v.strategy(0)), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(v.strategy(0), -v.strategy(1), 1e-12);
    // p is orthogonal to the columns of sigma and sigma' pi = 0
    EXPECT_NEAR(v.strategy.sum(), 0.0, 1e-12);
}

TEST(IncreasingProfit, NoneWhenDriftsInRange) {
    const auto v = detect_increasing_profit(snapshot(0.0, vec({0.1, 0.1}), Matrix::Ones(2, 1)));
    EXPECT_FALSE(v.found);
    EXPECT_LT(v.residual_norm, kIncreasingProfitTolerance);
}

TEST(IncreasingProfit, NeverOnFullRank) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index n = 1 + i % 4;
        const Eigen::Index d = n + i % 3;
        Matrix sigma(n, d);
        Vector mu(n);
        for (Eigen::Index a = 0; a < n; ++a) {
            mu(a) = n01(rng);
            for (Eigen::Index b = 0; b < d; ++b) {
                sigma(a, b) = n01(rng);
            }
        }
        const auto v = detect_increasing_profit(snapshot(0.01, mu, sigma));
        EXPECT_FALSE(v.found);
        EXPECT_LT(v.residual_norm, kIncreasingProfitTolerance);
    }
}

TEST(IncreasingProfit, ModelOverloadKeepsWorstPoint) {
    const auto m = builtin_model("custom_multi", {{"N", 2},
                                                  {"d", 1},
                                                  {"mu", {0.1, 0.2}},
                                                  {"sigma", {{1.0}, {1.0}}},
                                                  {"rank_deficient_allowed", true}});
    const std::vector<SamplePoint> pts{{0.0, Vector::Ones(2)}, {0.5, Vector::Constant(2, 2.0)}};
    const auto v = detect_increasing_profit(m, pts);
    EXPECT_TRUE(v.found);
    EXPECT_NEAR(v.residual_norm, 0.0707106781186548, 1e-9);
}

TEST(Arbitrage, ScalingFactor) {
    EXPECT_NEAR(arbitrage_scaling(0.5), -2.0 * std::log(0.5) / 0.5, 1e-15);
    EXPECT_NEAR(arbitrage_scaling(0.5), 2.7726, 1e-4);
    EXPECT_THROW(arbitrage_scaling(1.0), ConfigError);
    EXPECT_THROW(arbitrage_scaling(0.0), ConfigError);
}

TEST(Arbitrage, ExploitScalesStrategy) {
    const auto pi = Strategy::constant("p", vec({-0.5, 0.5}));
    const auto scaled = exploit_increasing_profit(pi, 0.5);
    Vector out;
    std::get<Strategy::Function>(scaled.rule)(0.0, Vector::Ones(2), out);
    EXPECT_NEAR(out(1), 0.5 * arbitrage_scaling(0.5), 1e-15);
}

TEST(Viability, ExplodingIntegralDiverges) {
    const auto m = builtin_model("exploding_mpr", default_params("exploding_mpr"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 3, 200);
    const auto r = viability_check(m, b, 6);
    EXPECT_EQ(r.verdict, Viability::divergent_mpr_integral);
    ASSERT_EQ(r.increments.size(), 6u);
    for (double inc : r.increments) {
        EXPECT_NEAR(inc, std::log(2.0), 0.05 * std::log(2.0));
    }
}

TEST(Viability, BlackScholesConstantProfile) {
    const auto m = builtin_model("black_scholes", default_params("black_scholes"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 3, 200);
    const auto r = viability_check(m, b, 5);
    EXPECT_EQ(r.verdict, Viability::viable);
    for (double x : r.profile) {
        EXPECT_NEAR(x, 0.16, 1e-12);
    }
}

TEST(Viability, BesselStable) {
    const auto m = builtin_model("bessel3", default_params("bessel3"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 128), 3, 500);
    const auto r = viability_check(m, b, 5);
    EXPECT_EQ(r.verdict, Viability::viable);
    for (double x : r.path_integrals) {
        EXPECT_TRUE(std::isfinite(x));
    }
}

TEST(Viability, BesselStableOnCoarseGrid) {
    // levels share one refined path, so a long first step still settles
    const auto m = builtin_model("bessel3", default_params("bessel3"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 1, 1000);
    const auto r = viability_check(m, b, 6);
    EXPECT_EQ(r.verdict, Viability::viable) << r.note;
    for (double inc : r.increments) {
        EXPECT_LT(std::abs(inc), 1e-3);
    }
}

TEST(DeflatorValidation, MinimalDeflatorIsDriftFree) {
    const auto m = builtin_model("black_scholes", default_params("black_scholes"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 9, 4000);
    const std::vector<Strategy> strategies{Strategy::constant("0", Vector::Zero(1)),
                                           Strategy::constant("1", Vector::Ones(1)), gop_strategy_rule(m)};
    const auto v = validate_deflator(minimal_deflator(m), m, b, strategies);
    EXPECT_TRUE(v.valid) << v.reason;
    EXPECT_TRUE(v.drift_equation_ok);
    ASSERT_EQ(v.strategies.size(), 3u);
    for (const auto& s : v.strategies) {
        EXPECT_TRUE(s.drift_free) << s.label << " t=" << s.t_statistic;
    }
}

TEST(DeflatorValidation, KernelPerturbationIsValidButLarger) {
    const auto m = one_asset_two_drivers();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 9, 4000);
    const DeflatorSpec spec{[](double, const Vector&) { return vec({0.1, 0.5}); }, "theta + (0, 0.5)"};
    const std::vector<Strategy> strategies{Strategy::constant("1", Vector::Ones(1))};
    const auto v = validate_deflator(spec, m, b, strategies);
    EXPECT_TRUE(v.drift_equation_ok);
    EXPECT_TRUE(v.valid) << v.reason;
    EXPECT_TRUE(v.minimality_ok);
    EXPECT_NEAR(v.min_norm_excess, std::sqrt(0.26) - 0.1, 1e-12);
}

TEST(DeflatorValidation, RejectsWrongDrift) {
    const auto m = one_asset_two_drivers();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 8), 9, 100);
    const DeflatorSpec spec{[](double, const Vector&) { return vec({0.2, 0.0}); }, "theta + (0.1, 0)"};
    const auto v = validate_deflator(spec, m, b, {});
    EXPECT_FALSE(v.drift_equation_ok);
    EXPECT_FALSE(v.valid);
    EXPECT_NEAR(v.max_drift_residual, 0.1, 1e-12);
    EXPECT_TRUE(v.deflator.empty());
}

TEST(MartingaleGap, Verdicts) {
    const auto bs = builtin_model("black_scholes", default_params("black_scholes"));
    const auto b1 = simulate_bundle(bs, SimulationGrid::uniform(1.0, 4), 1, 100000);
    EXPECT_EQ(martingale_gap(b1.require_deflator().column(4)).verdict,
              MartingaleVerdict::true_martingale_consistent);

    const auto bes = builtin_model("bessel3", default_params("bessel3"));
    const auto b2 = simulate_bundle(bes, SimulationGrid::uniform(1.0, 16), 1, 100000);
    const auto gap = martingale_gap(b2.require_deflator().column(16));
    EXPECT_EQ(gap.verdict, MartingaleVerdict::strict_local_martingale);
    EXPECT_NEAR(gap.mean, oracle::bessel3_deflator_mean(1.0, 1.0), 0.01);

    const std::vector<double> ones(2000, 1.0);
    const auto flat = martingale_gap(ones);
    EXPECT_EQ(flat.verdict, MartingaleVerdict::true_martingale_consistent);
    EXPECT_EQ(flat.std_error, 0.0);

    EXPECT_THROW(martingale_gap(std::vector<double>(999, 1.0)), ConfigError);
}

TEST(Diagnose, Trichotomy) {
    DiagnoseOptions o;
    o.n_paths = 1000;
    o.n_steps = 64;
    const auto bs = diagnose(builtin_model("black_scholes", default_params("black_scholes")), o);
    EXPECT_EQ(bs.viability.verdict, Viability::viable);
    EXPECT_FALSE(bs.increasing_profit.found);
    const auto ex = diagnose(builtin_model("exploding_mpr", default_params("exploding_mpr")), o);
    EXPECT_EQ(ex.viability.verdict, Viability::divergent_mpr_integral);
    EXPECT_NE(ex.deflator.verdict, MartingaleVerdict::true_martingale_consistent);
    const auto doc = to_json(ex);
    EXPECT_EQ(doc["viability"]["verdict"], "divergent_mpr_integral");
    EXPECT_EQ(doc["increasing_profit"]["verdict"], "none_detected");
}

TEST(Diagnose, IncreasingProfitOverridesViability) {
    DiagnoseOptions o;
    o.n_paths = 1000;
    o.n_steps = 16;
    const auto m = builtin_model("custom_multi", {{"N", 2},
                                                  {"d", 1},
                                                  {"mu", {0.1, 0.2}},
                                                  {"sigma", {{1.0}, {1.0}}},
                                                  {"rank_deficient_allowed", true}});
    const auto r = diagnose(m, o);
    EXPECT_FALSE(r.rank_ok);
    EXPECT_TRUE(r.increasing_profit.found);
    EXPECT_EQ(r.viability.verdict, Viability::undetermined);
    EXPECT_EQ(r.deflator.verdict, MartingaleVerdict::inconclusive);
}

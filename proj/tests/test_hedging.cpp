#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bp/errors.hpp"
#include "bp/gop.hpp"
#include "bp/hedging.hpp"
#include "bp/stats.hpp"
#include "oracles.hpp"

using namespace bp;

namespace {

MarketModel bs(double r = 0.0) {
    return builtin_model("black_scholes", {{"mu", 0.1}, {"sigma", 0.2}, {"r", r}, {"s", 100.0}, {"T", 1.0}});
}

std::pair<double, double> quartiles(const PathBundle& b, std::size_t k) {
    auto s = b.assets.column(k);
    std::sort(s.begin(), s.end());
    return {s[s.size() / 4], s[3 * s.size() / 4]};
}

}  // namespace

TEST(ValueFunction, UnitClaimIsConstant) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 201, 2000);
    const auto surface = value_function(m, parse_claim("zcb"), b);
    for (std::size_t k = 0; k <= 32; ++k) {
        EXPECT_EQ(surface.fits[k].r_squared, 1.0);
        for (double s : {60.0, 100.0, 150.0}) {
            EXPECT_EQ(surface.value(k, s), 1.0);
            EXPECT_EQ(surface.delta(k, s), 0.0);
        }
    }
}

TEST(ValueFunction, StockClaimTracksStock) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 202, 10000);
    const auto surface = value_function(m, parse_claim("asset"), b);
    for (std::size_t k : {16u, 32u, 48u}) {
        const auto [lo, hi] = quartiles(b, k);
        for (int i = 0; i <= 20; ++i) {
            const double s = lo + (hi - lo) * i / 20.0;
            EXPECT_NEAR(surface.value(k, s) / s, 1.0, 0.01) << "k=" << k << " s=" << s;
        }
    }
}

TEST(ValueFunction, CallMatchesClosedFormAtHalfTime) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 256), 203, 10000);
    const auto surface = value_function(m, parse_claim("call:100"), b);
    const auto [lo, hi] = quartiles(b, 128);
    for (int i = 0; i <= 50; ++i) {
        const double s = lo + (hi - lo) * i / 50.0;
        const double exact = oracle::bs_call(s, 100.0, 0.0, 0.2, 0.5);
        EXPECT_NEAR(surface.value(128, s) / exact, 1.0, 0.02) << "s=" << s;
    }
}

TEST(ValueFunction, PolynomialBasisStillAvailable) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 204, 5000);
    SurfaceOptions o;
    o.basis = RegressionBasis::polynomial;
    o.degree = 2;
    const auto surface = value_function(m, parse_claim("asset"), b, o);
    EXPECT_EQ(surface.fits[16].basis, RegressionBasis::polynomial);
    EXPECT_EQ(surface.fits[16].coefficients.size(), 3u);
    EXPECT_NEAR(surface.value(16, 100.0), 100.0, 1.0);
    o.degree = 0;
    EXPECT_THROW(value_function(m, parse_claim("asset"), b, o), ConfigError);
}

TEST(ValueFunction, OneDimensionalOnly) {
    const auto m = builtin_model("custom_multi", default_params("custom_multi"));
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 4), 1, 100);
    EXPECT_THROW(value_function(m, parse_claim("zcb"), b), ModelError);
    EXPECT_THROW(replicate(m, parse_claim("zcb"), b), ModelError);
}

TEST(Replicate, SavingsClaimHoldsNoStock) {
    const auto m = bs(0.03);
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 205, 2000);
    const auto h = replicate(m, parse_claim("savings"), b);
    for (double pi : h.strategy.data()) {
        ASSERT_EQ(pi, 0.0);
    }
    // the only error left is the Monte Carlo error of the initial capital
    const double expected = (h.initial_capital - 1.0) * std::exp(0.03);
    for (double e : h.terminal_error) {
        EXPECT_NEAR(e, expected, 1e-12);
    }
    const auto zt = summarize(b.require_deflator().column(64));
    EXPECT_LE(std::abs(h.initial_capital - 1.0), 3.0 * zt.std_error);
}

TEST(Replicate, StockClaimIsBuyAndHold) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 256), 206, 10000);
    const auto h = replicate(m, parse_claim("asset"), b);
    const auto pi = summarize(h.strategy.data());
    EXPECT_NEAR(pi.mean, 1.0, 0.02);
    EXPECT_LE(h.terminal_error_rms, 0.01 * h.initial_capital);
    EXPECT_NEAR(h.initial_capital, real_world_price(m, parse_claim("asset"), b).value, 1e-12);
}

TEST(Replicate, CallHedgeIsFairAndMinimal) {
    const auto m = bs();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 128), 207, 10000);
    const auto claim = parse_claim("call:100");
    const auto h = replicate(m, claim, b);
    EXPECT_NEAR(h.initial_capital, real_world_price(m, claim, b).value, 1e-12);
    ASSERT_TRUE(h.fairness.has_value());
    EXPECT_TRUE(h.fairness->pass) << h.fairness->worst_z;
    EXPECT_LT(h.terminal_error_rms, 0.2 * h.initial_capital);
    ASSERT_EQ(h.mean_delta.size(), 128u);
    ASSERT_EQ(h.rms_error_running.size(), 129u);
    EXPECT_EQ(h.rms_error_running.front(), 0.0);

    // more capital with the same rule never ends lower; less capital falls short somewhere
    const auto richer = rerun_hedge(m, h, 1.1 * h.initial_capital, b);
    for (std::size_t i = 0; i < richer.data().size(); ++i) {
        ASSERT_GE(richer.data()[i], h.wealth.data()[i]);
    }
    const auto poorer = rerun_hedge(m, h, 0.9 * h.initial_capital, b);
    const auto payoff = claim_samples(claim, b);
    std::size_t short_paths = 0;
    for (std::size_t p = 0; p < b.n_paths; ++p) {
        if (poorer(p, 128) * b.savings(p, 128) < payoff[p]) {
            ++short_paths;
        }
    }
    EXPECT_GT(short_paths, 0u);
}

TEST(Fairness, Verdicts) {
    const auto bes = builtin_model("bessel3", default_params("bessel3"));
    const auto b = simulate_bundle(bes, SimulationGrid::uniform(1.0, 50), 208, 20000);
    const auto savings = simulate_portfolio(bes, Strategy::constant("0", Vector::Zero(1)), 1.0, b);
    EXPECT_FALSE(fairness_check(benchmark(savings, b.require_gop()), b.grid).pass);
    const auto gop = fairness_check(benchmark(b.require_gop(), b.require_gop()), b.grid);
    EXPECT_TRUE(gop.pass);
    EXPECT_EQ(gop.worst_z, 0.0);
    const auto few = simulate_bundle(bes, SimulationGrid::uniform(1.0, 10), 208, 500);
    EXPECT_THROW(fairness_check(few.require_gop(), few.grid), ConfigError);
}

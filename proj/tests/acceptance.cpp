// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bp/gop.hpp"
#include "bp/hedging.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/pricing.hpp"
#include "bp/stats.hpp"
#include "bp/utility.hpp"
#include "oracles.hpp"

using namespace bp;
namespace fs = std::filesystem;

namespace {

// tolerances
constexpr double kBesselMean = 0.6827;
constexpr double kBesselTol = 0.01;
constexpr double kLn2Rel = 0.05;
constexpr std::size_t kMinLevels = 5;
constexpr double kResidualNorm = 0.0707;
constexpr double kResidualTol = 1e-9;
constexpr double kStrategyComponent = 0.7071;
constexpr double kStrategyTol = 1e-4;
constexpr double kFullRankResidual = 1e-9;
constexpr double kLogIdentity = 1e-10;
constexpr double kGridStep = 1e-4;
constexpr double kReferenceCall = 7.966;
constexpr double kCallStdErrorMax = 0.15;
constexpr double kUpperHedgingTol = 1e-12;
constexpr double kHedgeRmsFraction = 0.05;
constexpr double kFractionTol = 0.03;
constexpr double kJointSe = 3.0;
constexpr double kLogWealthTol = 1e-10;
constexpr double kExactTol = 1e-9;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

MarketModel bs_call_model() {
    return builtin_model("black_scholes", {{"mu", 0.1}, {"sigma", 0.2}, {"r", 0.0}, {"s", 100.0}, {"T", 1.0}});
}

MarketModel named(const char* name) { return builtin_model(name, default_params(name)); }

CoefficientSnapshot snapshot(double r, Vector mu, Matrix sigma) {
    CoefficientSnapshot s;
    s.r = r;
    s.mu = std::move(mu);
    s.sigma = std::move(sigma);
    return s;
}

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(BENCHMARK_PRICER_EXE) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void criterion1(Outcome& o) {
    const auto m = named("bessel3");
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 16), 1, 100000);
    const auto gap = martingale_gap(b.require_deflator().column(16));
    const double quad = oracle::bessel3_deflator_mean(1.0, 1.0);
    o.detail << "E[Z_T]=" << gap.mean << " se=" << gap.std_error << " quadrature=" << quad;
    o.check(b.exact_sampled, "exact sampler used");
    o.check(std::abs(quad - kBesselMean) <= 1e-4, "quadrature oracle");
    o.check(std::abs(gap.mean - kBesselMean) <= kBesselTol, "mean");
    o.check(gap.mean + 5.0 * gap.std_error < 1.0, "mean + 5 se < 1");
}

void criterion2(Outcome& o) {
    DiagnoseOptions opt;
    opt.n_paths = 1000;
    opt.n_steps = 64;
    opt.refinement_levels = 6;
    const auto bs = diagnose(named("black_scholes"), opt);
    const auto bes = diagnose(named("bessel3"), opt);
    const auto ex = diagnose(named("exploding_mpr"), opt);
    o.detail << "bs=" << to_string(bs.viability.verdict) << " bessel3=" << to_string(bes.viability.verdict)
             << " exploding=" << to_string(ex.viability.verdict) << " increments=";
    o.check(bs.viability.verdict == Viability::viable, "black_scholes viable");
    o.check(bes.viability.verdict == Viability::viable, "bessel3 viable");
    o.check(ex.viability.verdict == Viability::divergent_mpr_integral, "exploding divergent");
    o.check(ex.viability.increments.size() >= kMinLevels, "levels");
    for (double inc : ex.viability.increments) {
        o.detail << inc << ' ';
        o.check(std::abs(inc - std::log(2.0)) <= kLn2Rel * std::log(2.0), "increment");
    }
}

void criterion3(Outcome& o) {
    Vector mu(2);
    mu << 0.1, 0.2;
    const auto v = detect_increasing_profit(snapshot(0.0, mu, Matrix::Ones(2, 1)));
    o.detail << "residual_norm=" << v.residual_norm << " pi=(" << v.strategy(0) << ", " << v.strategy(1) << ")";
    o.check(v.found, "found");
    o.check(std::abs(v.residual_norm - 0.05 * std::sqrt(2.0)) <= kResidualTol, "residual norm exact");
    o.check(std::abs(v.residual_norm - kResidualNorm) <= 1e-4, "residual norm rounded");
    const double sign = v.strategy(1) > 0.0 ? 1.0 : -1.0;
    o.check(std::abs(sign * v.strategy(0) + kStrategyComponent) <= kStrategyTol &&
                std::abs(sign * v.strategy(1) - kStrategyComponent) <= kStrategyTol,
            "strategy");
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n01;
    double worst = 0.0;
    bool any = false;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index n = 1 + i % 5;
        const Eigen::Index d = n + i % 3;
        Matrix sigma(n, d);
        Vector m(n);
        for (Eigen::Index a = 0; a < n; ++a) {
            m(a) = n01(rng);
            for (Eigen::Index b = 0; b < d; ++b) {
                sigma(a, b) = n01(rng);
            }
        }
        const auto r = detect_increasing_profit(snapshot(0.0, m, sigma));
        worst = std::max(worst, r.residual_norm);
        any = any || r.found;
    }
    o.detail << " worst_full_rank=" << worst;
    o.check(worst < kFullRankResidual && !any, "full-rank residual");
}

void criterion4(Outcome& o) {
    double worst = 0.0;
    for (const char* name : {"black_scholes", "bessel3", "custom_multi", "exploding_mpr"}) {
        const auto m = named(name);
        const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 4, 2000);
        const auto& z = b.require_deflator();
        const auto& g = b.require_gop();
        for (std::size_t p = 0; p < b.n_paths; ++p) {
            for (std::size_t k = 0; k <= 64; ++k) {
                worst = std::max(worst, std::abs(std::log(z(p, k)) + std::log(g(p, k))));
            }
        }
    }
    o.detail << "max|log Z + log V|=" << worst;
    o.check(worst <= kLogIdentity, "log identity");

    // one-dimensional snapshots: global grid on [-20, 20]; two-dimensional: window around pi*
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst_gap = 0.0;
    for (int i = 0; i < 100; ++i) {
        if (i % 2 == 0) {
            const double sigma = 0.1 + 0.5 * std::abs(u(rng));
            const double r = 0.05 * u(rng);
            const auto s = snapshot(r, Vector::Constant(1, r + 0.5 * sigma * sigma * 4.0 * u(rng)),
                                    Matrix::Constant(1, 1, sigma));
            double best = -1e300;
            double arg = 0.0;
            for (long j = -200000; j <= 200000; ++j) {
                const double pi = j * kGridStep;
                const double gr = growth_rate(s, Vector::Constant(1, pi));
                if (gr > best) {
                    best = gr;
                    arg = pi;
                }
            }
            worst_gap = std::max(worst_gap, std::abs(arg - gop_strategy(s)(0)));
        } else {
            Matrix sigma(2, 2);
            sigma << 0.2 + 0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng), 0.3 + 0.1 * u(rng);
            Vector mu(2);
            mu << 0.05 + 0.05 * u(rng), 0.05 + 0.05 * u(rng);
            const auto s = snapshot(0.01, mu, sigma);
            const Vector star = gop_strategy(s);
            const Vector origin = (star / kGridStep).array().round() * kGridStep;
            double best = -1e300;
            Vector arg = origin;
            Vector pi(2);
            for (int a = -100; a <= 100; ++a) {
                for (int c = -100; c <= 100; ++c) {
                    pi << origin(0) + a * kGridStep, origin(1) + c * kGridStep;
                    const double gr = growth_rate(s, pi);
                    if (gr > best) {
                        best = gr;
                        arg = pi;
                    }
                }
            }
            worst_gap = std::max(worst_gap, (arg - star).cwiseAbs().maxCoeff());
        }
    }
    o.detail << " worst_argmax_gap=" << worst_gap;
    // the grid argmax is the grid point nearest pi*, so the gap is at most half a step
    o.check(worst_gap <= kGridStep, "grid search");
}

void criterion5(Outcome& o) {
    const auto m = bs_call_model();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 8), 5, 100000);
    const auto e = real_world_price(m, parse_claim("call:100"), b);
    const double closed = oracle::bs_call(100.0, 100.0, 0.0, 0.2, 1.0);
    o.detail << "price=" << e.value << " se=" << e.std_error << " closed_form=" << closed;
    o.check(std::abs(closed - kReferenceCall) <= 5e-4, "closed form");
    o.check(std::abs(e.value - kReferenceCall) <= 3.0 * e.std_error, "within 3 se");
    o.check(e.std_error <= kCallStdErrorMax, "stderr");
}

void criterion6(Outcome& o) {
    const auto m = named("bessel3");
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 16), 6, 100000);
    const auto zcb = zero_coupon_bond(m, b, 1.0);
    const auto cmp = risk_neutral_comparison(m, parse_claim("zcb"), b);
    // the risk-neutral value of a unit bond with r = 0 is 1
    const double risk_neutral = 1.0;
    o.detail << "zcb=" << zcb.value << " se=" << zcb.std_error << " discrepancy=" << cmp.discrepancy
             << " verdict=" << to_string(cmp.gap.verdict);
    o.check(std::abs(zcb.value - kBesselMean) <= kBesselTol, "bond value");
    o.check(zcb.value + 5.0 * zcb.std_error < risk_neutral, "below risk-neutral");
    o.check(cmp.gap.verdict == MartingaleVerdict::strict_local_martingale, "flagged strict");
    o.check(!cmp.reweighted.has_value(), "no reweighted price");
    o.check(std::abs(cmp.discrepancy - (risk_neutral - zcb.value)) <= kBesselTol, "discrepancy");
}

void criterion7(Outcome& o) {
    double worst = 0.0;
    for (const char* name : {"black_scholes", "bessel3"}) {
        const auto m = named(name);
        const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 7, 10000);
        const double s0 = m.initial_prices(0);
        for (const std::string& c : {"call:" + std::to_string(s0), std::string("zcb"), "put:" + std::to_string(1.2 * s0)}) {
            const auto claim = parse_claim(c);
            worst = std::max(worst, std::abs(real_world_price(m, claim, b).value -
                                             upper_hedging_price(m, claim, b).value));
        }
    }
    o.detail << "max|upper - real_world|=" << worst;
    o.check(worst <= kUpperHedgingTol, "agreement");
}

void criterion8(Outcome& o) {
    const auto m = bs_call_model();
    const auto claim = parse_claim("call:100");
    const auto coarse_bundle = simulate_bundle(m, SimulationGrid::uniform(1.0, 256), 1, 10000);
    const double coarse = replicate(m, claim, coarse_bundle).terminal_error_rms;
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 1024), 1, 10000);
    const auto h = replicate(m, claim, b);
    const double fine = h.terminal_error_rms;

    auto s = b.assets.column(512);
    std::sort(s.begin(), s.end());
    const double lo = s[s.size() / 4];
    const double hi = s[3 * s.size() / 4];
    double worst = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double x = lo + (hi - lo) * i / 100.0;
        const double exact = oracle::bs_call_delta(x, 100.0, 0.0, 0.2, 0.5) * x / oracle::bs_call(x, 100.0, 0.0, 0.2, 0.5);
        worst = std::max(worst, std::abs(h.surface.fraction(512, x) / exact - 1.0));
    }
    o.detail << "price=" << h.initial_capital << " rms_256=" << coarse << " rms_1024=" << fine
             << " rms_1024/price=" << fine / h.initial_capital << " fraction_err_iqr=" << worst;
    o.check(fine <= kHedgeRmsFraction * h.initial_capital, "rms <= 5% of price");
    o.check(fine < coarse, "rms decreases");
    o.check(worst <= kFractionTol, "fraction delta");
}

void criterion9(Outcome& o) {
    const auto m = bs_call_model();
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 8), 9, 100000);
    const auto claim = parse_claim("call:100");
    const auto rw = real_world_price(m, claim, b);
    double worst_z = 0.0;
    for (const char* name : {"log", "power:0.3", "power:0.5", "power:0.7"}) {
        const auto u = parse_utility(name);
        for (double v : {0.5, 1.0, 5.0}) {
            const auto r = indifference_price(u, v, claim, b);
            const double joint = std::hypot(r.price.std_error, rw.std_error);
            worst_z = std::max(worst_z, std::abs(r.price.value - rw.value) / joint);
        }
    }
    const auto lb = simulate_bundle(m, SimulationGrid::uniform(1.0, 64), 19, 5000);
    double worst_log = 0.0;
    for (double v : {0.5, 1.0, 5.0}) {
        const auto x = optimal_terminal_wealth(log_utility(), v, solve_lagrange(log_utility(), v, lb), lb);
        for (std::size_t p = 0; p < lb.n_paths; ++p) {
            const double gop = v * lb.require_gop()(p, 64);
            worst_log = std::max(worst_log, std::abs(x[p] / gop - 1.0));
        }
    }
    o.detail << "worst |p_H - real_world| / joint se=" << worst_z << " log wealth rel err=" << worst_log;
    o.check(worst_z <= kJointSe, "indifference prices");
    o.check(worst_log <= kLogWealthTol, "log wealth is gop");
}

void criterion10(Outcome& o) {
    // pricing is linear and monotone on a fixed bundle
    double worst_lin = 0.0;
    bool monotone = true;
    for (const char* name : {"black_scholes", "bessel3"}) {
        const auto m = named(name);
        const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 16), 10, 5000);
        const double s0 = m.initial_prices(0);
        auto price = [&](const std::string& c) { return real_world_price(m, parse_claim(c), b).value; };
        const double k = s0;
        const double call = price("call:" + std::to_string(k));
        const double put = price("put:" + std::to_string(k));
        const double stock = price("asset");
        const double bond = price("zcb");
        worst_lin = std::max(worst_lin, std::abs(call - put - (stock - k * bond)));
        worst_lin = std::max(worst_lin, std::abs(price("poly:3,2") - (3.0 * bond + 2.0 * stock)));
        monotone = monotone && price("call:" + std::to_string(0.9 * k)) > call &&
                   call > price("call:" + std::to_string(1.1 * k));
    }
    o.detail << "linearity=" << worst_lin;
    o.check(worst_lin <= kExactTol, "linearity");
    o.check(monotone, "monotonicity");

    // benchmarked savings, single-asset holdings and the GOP on every built-in
    double worst_margin = 1e300;
    for (const char* name : {"black_scholes", "bessel3", "exploding_mpr", "custom_multi"}) {
        const auto m = named(name);
        const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 50), 11, 20000);
        std::vector<Strategy> strategies{Strategy::constant("savings", Vector::Zero(m.n_assets)),
                                         gop_strategy_rule(m)};
        for (std::size_t i = 0; i < m.n_assets; ++i) {
            strategies.push_back(Strategy::constant("asset", Vector::Unit(m.n_assets, i)));
        }
        strategies.push_back(Strategy::constant("half", Vector::Constant(m.n_assets, 0.5)));
        for (const auto& s : strategies) {
            const auto v = numeraire_test(benchmark(simulate_portfolio(m, s, 1.0, b), b.require_gop()), b.grid);
            worst_margin = std::min(worst_margin, v.worst_margin);
            o.check(v.pass, std::string(name) + " " + s.label + " supermartingale");
        }
    }
    o.detail << " numeraire_worst_margin=" << worst_margin;

    // kernel-perturbed deflators are valid and no smaller than theta
    const auto m = builtin_model("custom_multi",
                                 {{"N", 1}, {"d", 2}, {"mu", {0.1}}, {"sigma", {{1.0, 0.0}}}, {"r", 0.0}, {"s", {1.0}}});
    const auto b = simulate_bundle(m, SimulationGrid::uniform(1.0, 32), 12, 4000);
    const std::vector<Strategy> hold{Strategy::constant("1", Vector::Ones(1))};
    double min_excess = 1e300;
    for (double e : {-0.5, 0.1, 0.3}) {
        const DeflatorSpec spec{[e](double, const Vector&) {
                                    Vector g(2);
                                    g << 0.1, e;
                                    return g;
                                },
                                "kernel perturbation"};
        const auto v = validate_deflator(spec, m, b, hold);
        o.check(v.valid && v.minimality_ok, "kernel deflator");
        min_excess = std::min(min_excess, v.min_norm_excess);
    }
    o.detail << " min(|gamma| - |theta|)=" << min_excess;
    o.check(min_excess >= 0.0, "minimality");

    // byte identity of artifacts across reruns and worker counts
    const fs::path dir = fs::path(TEST_SCRATCH_DIR);
    fs::remove_all(dir);
    const std::string price = "price --model bessel3 --claim zcb --paths 5000 --steps 32 --out ";
    const std::string sim = "simulate --model custom_multi --paths 5000 --steps 32 --strategies gop savings --out ";
    const bool ran = run_cli(price + (dir / "a").string()) == 0 && run_cli(price + (dir / "b").string()) == 0 &&
                     run_cli(sim + (dir / "w1").string(), "BENCHMARK_PRICER_THREADS=1") == 0 &&
                     run_cli(sim + (dir / "w4").string(), "BENCHMARK_PRICER_THREADS=4") == 0;
    o.check(ran, "cli runs");
    if (ran) {
        o.check(slurp(dir / "a" / "price.csv") == slurp(dir / "b" / "price.csv"), "rerun bytes");
        o.check(slurp(dir / "w1" / "simulate.csv") == slurp(dir / "w4" / "simulate.csv"), "worker bytes");
    }
}

struct Criterion {
    int id;
    const char* title;
    double budget_seconds;
    std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "strict local martingale gap", 10.0, criterion1},
        {2, "viability trichotomy", 10.0, criterion2},
        {3, "increasing profit detection", 1.0, criterion3},
        {4, "growth optimal portfolio identities", 30.0, criterion4},
        {5, "real-world call price", 30.0, criterion5},
        {6, "bond price discrepancy", 10.0, criterion6},
        {7, "upper hedging equals real-world", 30.0, criterion7},
        {8, "replication", 120.0, criterion8},
        {9, "utility indifference universality", 120.0, criterion9},
        {10, "property suite", 120.0, criterion10},
    };
    int failures = 0;
    double total = 0.0;
    for (const auto& c : criteria) {
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        total += secs;
        if (secs > c.budget_seconds) {
            o.check(false, "runtime");
        }
        failures += o.pass ? 0 : 1;
        std::printf("[%s] %2d %s: %s (%.1fs of %.0fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.title,
                    o.detail.str().c_str(), secs, c.budget_seconds);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed in %.1fs\n", static_cast<int>(criteria.size()) - failures,
                criteria.size(), total);
    return failures == 0 ? 0 : 1;
}

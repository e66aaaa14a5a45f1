#include "bp/noarb_diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bp/errors.hpp"
#include "bp/parallel.hpp"
#include "bp/rng.hpp"
#include "bp/stats.hpp"

namespace bp {

namespace {

Vector excess_return(const CoefficientSnapshot& snap) {
    return snap.mu - Vector::Constant(snap.mu.size(), snap.r);
}

void load_state(const PathTable& assets, std::size_t p, std::size_t k, Vector& state) {
    const auto row = assets.row(p, k);
    for (std::size_t i = 0; i < row.size(); ++i) {
        state(static_cast<Eigen::Index>(i)) = row[i];
    }
}

// Sub-grid of the first bundle step [0, t_1]: [0, t_1 2^-level] followed by `level`
// dyadic bands of `band_steps` steps. Coarser levels are subsets of finer ones.
std::vector<double> first_step_grid(double t1, std::size_t level, std::size_t band_steps) {
    std::vector<double> u{0.0};
    for (std::size_t j = level; j-- > 0;) {
        const double a = std::ldexp(t1, -static_cast<int>(j + 1));
        const double b = std::ldexp(t1, -static_cast<int>(j));
        if (u.size() == 1) {
            u.push_back(a);
        }
        for (std::size_t i = 1; i <= band_steps; ++i) {
            u.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(band_steps));
        }
        u.back() = b;
    }
    if (level == 0) {
        u.push_back(t1);
    }
    return u;
}

// Sum of ||theta||^2 du over the first bundle step at levels 1..max_level. All levels
// walk one Brownian path drawn on the finest sub-grid and pinned to the bundle's
// first increment, so the profile of a path converges when the integral does.
std::vector<double> refined_first_step(const MarketModel& model, const PathBundle& bundle, std::size_t p,
                                       std::size_t max_level, std::size_t band_steps) {
    const double t1 = bundle.grid.time(1);
    const std::vector<double> fine = first_step_grid(t1, max_level, band_steps);
    const std::size_t steps = fine.size() - 1;
    const std::size_t d = model.n_drivers;
    const std::size_t n = model.n_assets;

    Matrix path = Matrix::Zero(static_cast<Eigen::Index>(steps + 1), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < steps; ++i) {
        const double scale = std::sqrt(fine[i + 1] - fine[i]);
        for (std::size_t j = 0; j < d; ++j) {
            const double z = counter_normal(bundle.seed, Stream::bridge, static_cast<std::uint32_t>(p),
                                            static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
            path(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(j)) =
                path(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + scale * z;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double gap = path(static_cast<Eigen::Index>(steps), jj) - bundle.drivers(p, 0, j);
        for (std::size_t i = 0; i <= steps; ++i) {
            path(static_cast<Eigen::Index>(i), jj) -= (fine[i] / t1) * gap;
        }
    }

    std::vector<double> sums;
    CoefficientSnapshot snap;
    Vector state(static_cast<Eigen::Index>(n));
    Vector dw(static_cast<Eigen::Index>(d));
    for (std::size_t level = 1; level <= max_level; ++level) {
        const std::vector<double> u = first_step_grid(t1, level, band_steps);
        state = model.initial_prices;
        double sum = 0.0;
        std::size_t prev = 0;
        for (std::size_t i = 0; i + 1 < u.size(); ++i) {
            const auto next = static_cast<std::size_t>(std::lower_bound(fine.begin(), fine.end(), u[i + 1]) -
                                                       fine.begin());
            const double du = u[i + 1] - u[i];
            dw = (path.row(static_cast<Eigen::Index>(next)) - path.row(static_cast<Eigen::Index>(prev))).transpose();
            prev = next;
            const double t = (i == 0 && model.singular_at_zero) ? u[1] : u[i];
            model.coefficients(t, state, snap);
            const Vector theta = market_price_of_risk(snap, model.rank_deficient_allowed);
            sum += theta.squaredNorm() * du;
            for (std::size_t a = 0; a < n; ++a) {
                const auto aa = static_cast<Eigen::Index>(a);
                const double var = snap.sigma.row(aa).squaredNorm();
                state(aa) *= std::exp((snap.mu(aa) - 0.5 * var) * du + snap.sigma.row(aa).dot(dw));
            }
            if (!state.allFinite() || (state.array() <= 0.0).any()) {
                throw NumericalError("refined path left the positive domain");
            }
        }
        sums.push_back(sum);
    }
    return sums;
}

}  // namespace

Vector market_price_of_risk(const CoefficientSnapshot& snapshot, bool allow_rank_deficient) {
    const Eigen::Index n = snapshot.mu.size();
    const Eigen::Index d = snapshot.sigma.cols();
    if (snapshot.sigma.rows() != n) {
        throw ConfigError("volatility matrix has wrong number of rows");
    }
    const Vector excess = excess_return(snapshot);
    Vector theta;
    if (n == 1 && d == 1) {
        const double s = snapshot.sigma(0, 0);
        if (s != 0.0) {
            theta = Vector::Constant(1, excess(0) / s);
        } else if (allow_rank_deficient) {
            theta = Vector::Zero(1);
        } else {
            throw ModelError("zero volatility: market price of risk undefined");
        }
    } else if (full_row_rank(snapshot.sigma)) {
        const Matrix gram = snapshot.sigma * snapshot.sigma.transpose();
        theta = snapshot.sigma.transpose() * gram.llt().solve(excess);
    } else if (allow_rank_deficient) {
        theta = min_norm_solve(snapshot.sigma, excess);
    } else {
        throw ModelError("volatility matrix is rank deficient: market price of risk undefined");
    }
    if (!theta.allFinite()) {
        throw NumericalError("non-finite market price of risk");
    }
    return theta;
}

IncreasingProfitVerdict detect_increasing_profit(const CoefficientSnapshot& snapshot) {
    if (snapshot.sigma.rows() != snapshot.mu.size()) {
        throw ConfigError("volatility matrix has wrong number of rows");
    }
    IncreasingProfitVerdict v;
    v.residual = project_onto_left_kernel(snapshot.sigma, excess_return(snapshot));
    v.residual_norm = v.residual.norm();
    v.found = v.residual_norm > kIncreasingProfitTolerance;
    v.strategy = v.found ? Vector(v.residual / v.residual_norm) : Vector::Zero(snapshot.mu.size());
    return v;
}

IncreasingProfitVerdict detect_increasing_profit(const MarketModel& model,
                                                 std::span<const SamplePoint> points) {
    IncreasingProfitVerdict worst;
    worst.residual = Vector::Zero(static_cast<Eigen::Index>(model.n_assets));
    worst.strategy = worst.residual;
    bool first = true;
    CoefficientSnapshot snap;
    for (const auto& pt : points) {
        if (static_cast<std::size_t>(pt.state.size()) != model.n_assets) {
            throw ConfigError("sample point has wrong dimension");
        }
        model.coefficients(pt.t, pt.state, snap);
        if (static_cast<std::size_t>(snap.mu.size()) != model.n_assets ||
            static_cast<std::size_t>(snap.sigma.rows()) != model.n_assets ||
            static_cast<std::size_t>(snap.sigma.cols()) != model.n_drivers) {
            throw ConfigError("coefficient dimensions do not match the model");
        }
        IncreasingProfitVerdict v = detect_increasing_profit(snap);
        if (first || v.residual_norm > worst.residual_norm) {
            v.point = pt;
            worst = std::move(v);
            first = false;
        }
    }
    return worst;
}

double arbitrage_scaling(double v) {
    if (!(v > 0.0 && v < 1.0)) {
        throw ConfigError("initial capital for the arbitrage construction must lie in (0, 1)");
    }
    return -(std::log(v) + std::log1p(-v)) / v;
}

Strategy exploit_increasing_profit(const Strategy& pi, double v) {
    const double c = arbitrage_scaling(v);
    const std::string label = pi.label + "_scaled";
    if (const auto* table = std::get_if<PathTable>(&pi.rule)) {
        PathTable scaled = *table;
        for (std::size_t p = 0; p < scaled.paths(); ++p) {
            for (std::size_t k = 0; k < scaled.nodes(); ++k) {
                for (double& x : scaled.row(p, k)) {
                    x *= c;
                }
            }
        }
        return Strategy::tabulated(label, std::move(scaled));
    }
    const auto f = std::get<Strategy::Function>(pi.rule);
    return Strategy::functional(label, [f, c](double t, const Vector& s, Vector& out) {
        f(t, s, out);
        out *= c;
    });
}

ViabilityReport viability_check(const MarketModel& model, const PathBundle& bundle,
                                std::size_t refinement_levels, std::size_t band_steps) {
    if (refinement_levels == 0) {
        throw ConfigError("viability check needs at least one refinement level");
    }
    if (bundle.n_paths == 0 || bundle.assets.width() != model.n_assets ||
        bundle.drivers.width() != model.n_drivers) {
        throw ConfigError("bundle does not match the model");
    }
    const auto& grid = bundle.grid;
    const std::size_t levels = refinement_levels + 1;
    const std::size_t n_paths = bundle.n_paths;
    // sums[l * n_paths + p]
    std::vector<double> sums(levels * n_paths, 0.0);

    parallel_for_paths(n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(model.n_assets));
        for (std::size_t p = begin; p < end; ++p) {
            double base = 0.0;
            double first = 0.0;
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                load_state(bundle.assets, p, k, state);
                model.coefficients(t, state, snap);
                const Vector theta = market_price_of_risk(snap, model.rank_deficient_allowed);
                const double term = theta.squaredNorm() * grid.dt(k);
                base += term;
                if (k == 0) {
                    first = term;
                }
            }
            sums[p] = base;
            const std::vector<double> refined =
                refined_first_step(model, bundle, p, refinement_levels, band_steps);
            for (std::size_t l = 1; l < levels; ++l) {
                sums[l * n_paths + p] = (base - first) + refined[l - 1];
            }
        }
    });

    ViabilityReport report;
    report.path_integrals.assign(sums.begin(), sums.begin() + static_cast<std::ptrdiff_t>(n_paths));
    for (std::size_t l = 0; l < levels; ++l) {
        report.profile.push_back(
            compensated_sum(std::span<const double>(sums.data() + l * n_paths, n_paths)) /
            static_cast<double>(n_paths));
        if (l > 0) {
            report.increments.push_back(report.profile[l] - report.profile[l - 1]);
        }
    }

    bool any_persistent = false;
    bool all_stable = true;
    for (std::size_t p = 0; p < n_paths; ++p) {
        auto at = [&](std::size_t l) { return sums[l * n_paths + p]; };
        const double last = at(levels - 1);
        const double last_change = std::abs(last - at(levels - 2));
        if (!std::isfinite(last) || last_change > kStabilityTolerance * std::abs(last)) {
            all_stable = false;
        }
        bool persistent = true;
        for (std::size_t l = 1; l < levels && persistent; ++l) {
            const double inc = at(l) - at(l - 1);
            if (!(inc > kStabilityTolerance * std::abs(at(l)))) {
                persistent = false;
            }
            if (l >= 2 && !(inc >= kGrowthPersistence * (at(l - 1) - at(l - 2)))) {
                persistent = false;
            }
        }
        any_persistent = any_persistent || persistent;
    }
    if (any_persistent) {
        report.verdict = Viability::divergent_mpr_integral;
        report.note = "sum of ||theta||^2 dt keeps growing under refinement near t = 0";
    } else if (all_stable) {
        report.verdict = Viability::viable;
        report.note = "sum of ||theta||^2 dt is stable under refinement on every path";
    } else {
        report.verdict = Viability::undetermined;
        report.note = "refinement profile neither stable nor persistently growing";
    }
    return report;
}

DeflatorSpec minimal_deflator(const MarketModel& model) {
    DeflatorSpec spec;
    spec.description = "minimal deflator (gamma = theta)";
    spec.gamma = [model](double t, const Vector& state) {
        CoefficientSnapshot snap;
        model.coefficients(t, state, snap);
        return market_price_of_risk(snap, model.rank_deficient_allowed);
    };
    return spec;
}

DeflatorValidation validate_deflator(const DeflatorSpec& spec, const MarketModel& model,
                                     const PathBundle& bundle, std::span<const Strategy> strategies) {
    if (!spec.gamma) {
        throw ConfigError("deflator spec has no gamma");
    }
    const auto& grid = bundle.grid;
    const std::size_t n_paths = bundle.n_paths;
    const std::size_t d = model.n_drivers;
    DeflatorValidation out;

    std::vector<double> residual(n_paths, 0.0);
    std::vector<double> excess_norm(n_paths, std::numeric_limits<double>::infinity());
    PathTable deflator(n_paths, grid.n_nodes(), 1);
    parallel_for_paths(n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(model.n_assets));
        for (std::size_t p = begin; p < end; ++p) {
            double log_d = 0.0;
            deflator(p, 0) = 1.0;
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                load_state(bundle.assets, p, k, state);
                model.coefficients(t, state, snap);
                const Vector gamma = spec.gamma(t, state);
                if (static_cast<std::size_t>(gamma.size()) != d || !gamma.allFinite()) {
                    throw NumericalError("deflator gamma has wrong size or is not finite");
                }
                const Vector excess = excess_return(snap);
                const double res = (snap.sigma * gamma - excess).norm() / std::max(1.0, excess.norm());
                residual[p] = std::max(residual[p], res);
                const Vector theta = market_price_of_risk(snap, model.rank_deficient_allowed);
                excess_norm[p] = std::min(excess_norm[p], gamma.norm() - theta.norm());
                const auto dw = bundle.drivers.row(p, k);
                double stochastic = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    stochastic += gamma(static_cast<Eigen::Index>(j)) * dw[j];
                }
                log_d -= stochastic + 0.5 * gamma.squaredNorm() * grid.dt(k);
                const double value = std::exp(log_d);
                if (!std::isfinite(value)) {
                    throw NumericalError("non-finite deflator exponential");
                }
                deflator(p, k + 1) = value;
            }
        }
    });
    out.max_drift_residual = *std::max_element(residual.begin(), residual.end());
    out.min_norm_excess = *std::min_element(excess_norm.begin(), excess_norm.end());
    out.drift_equation_ok = out.max_drift_residual <= kDriftEquationTolerance;
    out.minimality_ok = out.min_norm_excess >= -1e-12;
    if (!out.drift_equation_ok) {
        out.valid = false;
        out.reason = "gamma violates sigma gamma = mu - r 1 (max residual " +
                     std::to_string(out.max_drift_residual) + ")";
        return out;
    }

    bool all_drift_free = true;
    for (const auto& strategy : strategies) {
        const PathTable wealth = simulate_portfolio(model, strategy, 1.0, bundle);
        // Regression of increments of D V on dt through the origin, with
        // heteroskedasticity-robust standard error.
        std::vector<double> xy;
        std::vector<double> xx;
        std::vector<double> incs;
        std::vector<double> steps;
        double max_level = 0.0;
        double max_inc = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) {
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double x0 = deflator(p, k) * wealth(p, k);
                const double x1 = deflator(p, k + 1) * wealth(p, k + 1);
                const double dt = grid.dt(k);
                incs.push_back(x1 - x0);
                steps.push_back(dt);
                xy.push_back((x1 - x0) * dt);
                xx.push_back(dt * dt);
                max_level = std::max(max_level, std::abs(x1));
                max_inc = std::max(max_inc, std::abs(x1 - x0));
            }
        }
        StrategyDriftTest test;
        test.label = strategy.label;
        const double sxx = compensated_sum(xx);
        if (max_inc <= 1e-12 * std::max(1.0, max_level)) {
            test.slope = 0.0;
            test.t_statistic = 0.0;
        } else {
            test.slope = compensated_sum(xy) / sxx;
            std::vector<double> meat(incs.size());
            for (std::size_t i = 0; i < incs.size(); ++i) {
                const double e = incs[i] - test.slope * steps[i];
                meat[i] = steps[i] * steps[i] * e * e;
            }
            const double se = std::sqrt(compensated_sum(meat)) / sxx;
            test.t_statistic = se > 0.0 ? test.slope / se
                                        : (test.slope == 0.0 ? 0.0
                                                             : std::numeric_limits<double>::infinity());
        }
        test.drift_free = std::abs(test.t_statistic) < kDriftTStatistic;
        all_drift_free = all_drift_free && test.drift_free;
        out.strategies.push_back(std::move(test));
    }
    out.deflator = std::move(deflator);
    out.valid = all_drift_free;
    out.reason = all_drift_free ? "drift equation holds and every tested product is drift-free"
                                : "a deflated portfolio shows a significant drift";
    return out;
}

MartingaleGap martingale_gap(std::span<const double> terminal_samples) {
    if (terminal_samples.empty()) {
        throw ConfigError("martingale gap needs a non-empty sample");
    }
    if (terminal_samples.size() < kMinMartingaleSamples) {
        throw ConfigError("martingale gap needs at least " + std::to_string(kMinMartingaleSamples) +
                          " samples");
    }
    const SampleSummary s = summarize(terminal_samples);
    MartingaleGap gap{s.mean, s.std_error, MartingaleVerdict::inconclusive};
    if (s.mean + 5.0 * s.std_error < 1.0) {
        gap.verdict = MartingaleVerdict::strict_local_martingale;
    } else if (std::abs(s.mean - 1.0) <= 3.0 * s.std_error) {
        gap.verdict = MartingaleVerdict::true_martingale_consistent;
    }
    return gap;
}

DiagnosticsReport diagnose(const MarketModel& model, const DiagnoseOptions& options) {
    validate_model(model);
    if (options.n_paths == 0 || options.n_steps == 0 || options.refinement_levels == 0) {
        throw ConfigError("diagnose needs positive paths, steps and refinement levels");
    }
    DiagnosticsReport report;
    const SimulationGrid grid = SimulationGrid::uniform(model.horizon, options.n_steps);
    BundleOptions bundle_options;
    bundle_options.with_gop = false;
    bundle_options.with_deflator = false;
    PathBundle bundle = simulate_bundle(model, grid, options.seed, options.n_paths, bundle_options);

    std::vector<SamplePoint> points;
    const std::size_t sampled_paths = std::min<std::size_t>(options.n_paths, 16);
    for (std::size_t p = 0; p < sampled_paths; ++p) {
        for (std::size_t k = 0; k < grid.n_steps(); ++k) {
            SamplePoint pt;
            pt.t = coefficient_time(model, grid, k);
            pt.state.resize(static_cast<Eigen::Index>(model.n_assets));
            load_state(bundle.assets, p, k, pt.state);
            points.push_back(std::move(pt));
        }
    }
    CoefficientSnapshot snap;
    for (const auto& pt : points) {
        model.coefficients(pt.t, pt.state, snap);
        if (!full_row_rank(snap.sigma)) {
            report.rank_ok = false;
            break;
        }
    }
    if (!report.rank_ok && !model.rank_deficient_allowed) {
        throw ModelError("volatility matrix is rank deficient at a sampled point");
    }
    report.increasing_profit = detect_increasing_profit(model, points);

    report.viability = viability_check(model, bundle, options.refinement_levels);
    bundle.deflator = simulate_deflator(model, bundle);
    const auto terminal = bundle.deflator->column(grid.n_steps());
    if (terminal.size() >= kMinMartingaleSamples) {
        report.deflator = martingale_gap(terminal);
    } else {
        const SampleSummary s = summarize(terminal);
        report.deflator = {s.mean, s.std_error, MartingaleVerdict::inconclusive};
    }

    if (report.increasing_profit.found) {
        // An increasing profit is an arbitrage of the first kind; no deflator exists.
        if (report.viability.verdict == Viability::viable) {
            report.viability.verdict = Viability::undetermined;
        }
        report.viability.note = "increasing profit present: mu - r 1 is not in the range of sigma";
        report.deflator.verdict = MartingaleVerdict::inconclusive;
    }
    if (report.viability.verdict == Viability::divergent_mpr_integral) {
        report.deflator.verdict = MartingaleVerdict::inconclusive;
    }
    return report;
}

std::string to_string(Viability v) {
    switch (v) {
        case Viability::viable:
            return "viable";
        case Viability::divergent_mpr_integral:
            return "divergent_mpr_integral";
        case Viability::undetermined:
            return "undetermined";
    }
    return "undetermined";
}

std::string to_string(MartingaleVerdict v) {
    switch (v) {
        case MartingaleVerdict::true_martingale_consistent:
            return "true_martingale_consistent";
        case MartingaleVerdict::strict_local_martingale:
            return "strict_local_martingale";
        case MartingaleVerdict::inconclusive:
            return "inconclusive";
    }
    return "inconclusive";
}

nlohmann::json to_json(const DiagnosticsReport& report) {
    nlohmann::json strategy = nlohmann::json::array();
    for (Eigen::Index i = 0; i < report.increasing_profit.strategy.size(); ++i) {
        strategy.push_back(report.increasing_profit.strategy(i));
    }
    return {
        {"rank_ok", report.rank_ok},
        {"increasing_profit",
         {{"verdict", report.increasing_profit.found ? "found" : "none_detected"},
          {"residual_norm", report.increasing_profit.residual_norm},
          {"strategy", strategy}}},
        {"viability",
         {{"verdict", to_string(report.viability.verdict)},
          {"profile", report.viability.profile},
          {"increments", report.viability.increments},
          {"note", report.viability.note}}},
        {"deflator",
         {{"verdict", to_string(report.deflator.verdict)},
          {"mean", report.deflator.mean},
          {"stderr", report.deflator.std_error}}},
    };
}

}  // namespace bp

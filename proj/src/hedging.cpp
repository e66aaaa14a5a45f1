#include "bp/hedging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "bp/errors.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/parallel.hpp"
#include "bp/stats.hpp"

namespace bp {

namespace {

constexpr int kSplineOrder = 3;
constexpr double kWealthFloor = 1e-3;  // relative to the initial capital

void require_one_dimensional(const MarketModel& model) {
    if (model.n_assets != 1 || model.n_drivers != 1) {
        throw ModelError("replication is implemented for one asset driven by one Brownian motion");
    }
}

NodeFit constant_fit(double c) {
    NodeFit f;
    f.coefficients = {c};
    return f;
}

// Index of the knot span holding x and the four cubic B-splines that are nonzero there.
std::size_t spline_basis(const std::vector<double>& u, double x, std::array<double, 4>& n) {
    const std::size_t m = u.size() - kSplineOrder - 1;  // number of basis functions
    std::size_t span;
    if (x >= u[m]) {
        span = m - 1;
    } else {
        span = static_cast<std::size_t>(std::upper_bound(u.begin(), u.end(), x) - u.begin()) - 1;
        span = std::clamp<std::size_t>(span, kSplineOrder, m - 1);
    }
    std::array<double, 4> left{};
    std::array<double, 4> right{};
    n[0] = 1.0;
    for (int j = 1; j <= kSplineOrder; ++j) {
        left[j] = x - u[span + 1 - j];
        right[j] = u[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom != 0.0 ? n[r] / denom : 0.0;
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    return span - kSplineOrder;  // first nonzero basis function
}

std::vector<double> spline_knots(std::vector<double> z, std::size_t interior) {
    std::sort(z.begin(), z.end());
    const double lo = z.front();
    const double hi = z.back();
    const double gap = 1e-6 * (hi - lo);
    std::vector<double> u(kSplineOrder + 1, lo);
    for (std::size_t i = 1; i <= interior; ++i) {
        const double q = z[i * (z.size() - 1) / (interior + 1)];
        if (q > u.back() + gap && q < hi - gap) {
            u.push_back(q);
        }
    }
    u.insert(u.end(), kSplineOrder + 1, hi);
    return u;
}

Vector solve_normal(const Matrix& gram, const Vector& rhs) {
    const Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw NumericalError("degenerate regression matrix");
    }
    Vector beta = ldlt.solve(rhs);
    if (!beta.allFinite()) {
        throw NumericalError("degenerate regression matrix");
    }
    return beta;
}

// Second-difference penalty on the spline coefficients, strength picked by generalized
// cross-validation. gram and rhs are averages over the n samples.
Vector penalized_solve(const Matrix& gram, const Vector& rhs, std::span<const double> y) {
    const Eigen::Index m = gram.rows();
    const double n = static_cast<double>(y.size());
    double yy = 0.0;
    for (double v : y) {
        yy += v * v;
    }
    yy /= n;
    Matrix penalty = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i + 2 < m; ++i) {
        const double d[3] = {1.0, -2.0, 1.0};
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                penalty(i + a, i + b) += d[a] * d[b];
            }
        }
    }
    const double unit = gram.diagonal().mean();
    Vector best;
    double best_score = std::numeric_limits<double>::infinity();
    for (int e = -16; e <= 8; ++e) {
        const double lambda = unit * std::pow(10.0, 0.5 * e);
        Matrix a = gram + lambda * penalty;
        a.diagonal().array() += kRidge * unit;
        const Eigen::LDLT<Matrix> ldlt(a);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            continue;
        }
        const Vector beta = ldlt.solve(rhs);
        const double rss = yy - 2.0 * beta.dot(rhs) + beta.dot(gram * beta);
        const double dof = ldlt.solve(gram).trace();
        const double denom = 1.0 - dof / n;
        if (!beta.allFinite() || !(denom > 0.0)) {
            continue;
        }
        const double score = std::max(rss, 0.0) / (denom * denom);
        if (score < best_score) {
            best_score = score;
            best = beta;
        }
    }
    if (best.size() == 0) {
        throw NumericalError("degenerate regression matrix");
    }
    return best;
}

NodeFit fit_node(std::span<const double> x, std::span<const double> y, const SurfaceOptions& options) {
    const std::size_t n = x.size();
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    if (*ymax - *ymin <= 1e-14 * std::max(std::abs(*ymin), std::abs(*ymax))) {
        return constant_fit(y[0]);
    }
    double xmean = 0.0;
    for (double v : x) {
        xmean += v;
    }
    xmean /= static_cast<double>(n);
    double xvar = 0.0;
    for (double v : x) {
        xvar += (v - xmean) * (v - xmean);
    }
    const double xsd = std::sqrt(xvar / static_cast<double>(n));
    if (!(xsd > 1e-12 * std::max(1.0, std::abs(xmean)))) {
        // every path sits at the same state
        double acc = 0.0;
        for (double v : y) {
            acc += v;
        }
        NodeFit f = constant_fit(acc / static_cast<double>(n));
        f.center = xmean;
        f.r_squared = 0.0;
        return f;
    }

    NodeFit f;
    f.basis = options.basis;
    f.center = xmean;
    f.scale = xsd;
    std::vector<double> z(n);
    for (std::size_t p = 0; p < n; ++p) {
        z[p] = (x[p] - xmean) / xsd;
    }
    f.lo = *std::min_element(z.begin(), z.end());
    f.hi = *std::max_element(z.begin(), z.end());

    Eigen::Index m = 0;
    if (options.basis == RegressionBasis::polynomial) {
        if (options.degree == 0 || options.degree > 12) {
            throw ConfigError("regression degree must lie in 1..12");
        }
        m = static_cast<Eigen::Index>(options.degree + 1);
    } else {
        if (options.knots > 256) {
            throw ConfigError("at most 256 spline knots");
        }
        f.knots = spline_knots(z, options.knots);
        m = static_cast<Eigen::Index>(f.knots.size() - kSplineOrder - 1);
    }
    Matrix gram = Matrix::Zero(m, m);
    Vector rhs = Vector::Zero(m);
    const double w = 1.0 / static_cast<double>(n);
    if (options.basis == RegressionBasis::polynomial) {
        Vector phi(m);
        for (std::size_t p = 0; p < n; ++p) {
            phi(0) = 1.0;
            for (Eigen::Index j = 1; j < m; ++j) {
                phi(j) = phi(j - 1) * z[p];
            }
            gram.selfadjointView<Eigen::Lower>().rankUpdate(phi, w);
            rhs += (w * y[p]) * phi;
        }
        gram = gram.selfadjointView<Eigen::Lower>();
    } else {
        std::array<double, 4> nb{};
        for (std::size_t p = 0; p < n; ++p) {
            const auto first = static_cast<Eigen::Index>(spline_basis(f.knots, z[p], nb));
            for (int a = 0; a < 4; ++a) {
                rhs(first + a) += w * y[p] * nb[a];
                for (int b = 0; b < 4; ++b) {
                    gram(first + a, first + b) += w * nb[a] * nb[b];
                }
            }
        }
    }
    Vector beta;
    if (options.basis == RegressionBasis::polynomial) {
        gram.diagonal().array() += kRidge;
        beta = solve_normal(gram, rhs);
    } else {
        beta = penalized_solve(gram, rhs, y);
    }
    f.coefficients.assign(beta.data(), beta.data() + beta.size());

    double ymean = 0.0;
    for (double v : y) {
        ymean += v;
    }
    ymean /= static_cast<double>(n);
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double fitted = f.eval_x(z[p]);
        ss_res += (y[p] - fitted) * (y[p] - fitted);
        ss_tot += (y[p] - ymean) * (y[p] - ymean);
    }
    f.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

bool use_control(const PathBundle& bundle) {
    const auto zt = bundle.require_deflator().column(bundle.grid.n_steps());
    if (zt.size() < kMinMartingaleSamples) {
        return false;
    }
    return martingale_gap(zt).verdict == MartingaleVerdict::true_martingale_consistent;
}

// H / S^0_T when it is the same on every path, i.e. the claim is units of the savings account.
std::optional<double> savings_units(const std::vector<double>& h, const PathBundle& bundle) {
    const std::size_t last = bundle.grid.n_steps();
    const double c = h[0] / bundle.savings(0, last);
    for (std::size_t p = 0; p < h.size(); ++p) {
        const double cp = h[p] / bundle.savings(p, last);
        if (std::abs(cp - c) > 1e-14 * std::abs(c)) {
            return std::nullopt;
        }
    }
    for (std::size_t k = 0; k <= last; ++k) {
        for (std::size_t p = 1; p < h.size(); ++p) {
            if (bundle.savings(p, k) != bundle.savings(0, k)) {
                return std::nullopt;
            }
        }
    }
    return c;
}

struct HedgePath {
    PathTable strategy;
    PathTable deltas;
    PathTable wealth;  // discounted
};

// Fraction of wealth delta * S / D with D = max(v(t, S), own wealth, floor). Dividing by the
// own wealth alone turns small shortfalls into runaway leverage under the log-space update,
// and the fitted value alone can be zero or negative in the tails. Own wealth is advanced
// with the same log step as simulate_portfolio.
HedgePath run_delta_hedge(const MarketModel& model, const ValueSurface& surface, double v,
                          const PathBundle& bundle) {
    const auto& grid = bundle.grid;
    const std::size_t steps = grid.n_steps();
    HedgePath out{PathTable(bundle.n_paths, steps, 1), PathTable(bundle.n_paths, steps, 1),
                  PathTable(bundle.n_paths, grid.n_nodes(), 1)};
    parallel_for_paths(bundle.n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(1);
        for (std::size_t p = begin; p < end; ++p) {
            double log_v = 0.0;
            out.wealth(p, 0) = v;
            for (std::size_t k = 0; k < steps; ++k) {
                const double s = bundle.assets(p, k);
                // node 0 has a single state, so its slope is read off the first fitted node
                const std::size_t node = (k == 0 && steps > 1) ? 1 : k;
                const double delta = surface.delta(node, s);
                if (!std::isfinite(delta) || std::abs(delta) > kMaxDifferenceQuotient) {
                    throw NumericalError("unstable delta at t = " + std::to_string(grid.time(k)));
                }
                const double own = v * std::exp(log_v) * bundle.savings(p, k);
                const double fitted = surface.value(k, s);
                const double pi = delta * s / std::max({fitted, own, kWealthFloor * v});
                out.deltas(p, k) = delta;
                out.strategy(p, k) = pi;

                const double t = coefficient_time(model, grid, k);
                state(0) = s;
                model.coefficients(t, state, snap);
                const double exposure = snap.sigma(0, 0) * pi;
                log_v += (pi * (snap.mu(0) - snap.r) - 0.5 * exposure * exposure) * grid.dt(k) +
                         exposure * bundle.drivers(p, k);
                if (!std::isfinite(log_v)) {
                    throw NumericalError("hedge wealth is not finite on path " + std::to_string(p));
                }
                out.wealth(p, k + 1) = v * std::exp(log_v);
            }
        }
    });
    return out;
}

// Discounted wealth of holding delta(t, S) shares, financed through the savings account.
// Z times this is a martingale of the scheme for any surface, which is all the control needs.
PathTable share_hedge(const ValueSurface& surface, double v, const PathBundle& bundle) {
    const std::size_t steps = bundle.grid.n_steps();
    PathTable wealth(bundle.n_paths, bundle.grid.n_nodes(), 1);
    parallel_for_paths(bundle.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double w = v;
            wealth(p, 0) = w;
            for (std::size_t k = 0; k < steps; ++k) {
                const double s = bundle.assets(p, k);
                const double delta = surface.delta((k == 0 && steps > 1) ? 1 : k, s);
                w += delta * (bundle.assets(p, k + 1) / bundle.savings(p, k + 1) - s / bundle.savings(p, k));
                wealth(p, k + 1) = w;
            }
        }
    });
    return wealth;
}

// One regression pass. With a control hedge P the target is
//   S^0_k [ (Z_T / Z_k)(H / S^0_T - P_T) + P_k ],
// which has the same conditional mean as S^0_k (Z_T / Z_k) H / S^0_T because Z P is
// a martingale, and a variance set by the hedging error of P.
ValueSurface fit_surface(const std::vector<double>& h, const PathBundle& bundle,
                         const SurfaceOptions& options, const PathTable* control) {
    const auto& grid = bundle.grid;
    const std::size_t n_paths = bundle.n_paths;
    const std::size_t last = grid.n_steps();
    const PathTable& z = bundle.require_deflator();

    ValueSurface surface;
    surface.grid = grid;
    surface.fits.resize(grid.n_nodes());
    // Nodes are independent; each fit reduces over paths in index order.
    parallel_for_paths(grid.n_nodes(), [&](std::size_t begin, std::size_t end) {
        std::vector<double> x(n_paths);
        std::vector<double> y(n_paths);
        for (std::size_t k = begin; k < end; ++k) {
            for (std::size_t p = 0; p < n_paths; ++p) {
                x[p] = std::log(bundle.assets(p, k));
                const double ratio = z(p, last) / z(p, k);
                const double terminal = h[p] / bundle.savings(p, last);
                if (control != nullptr) {
                    y[p] = bundle.savings(p, k) *
                           (ratio * (terminal - (*control)(p, last)) + (*control)(p, k));
                } else {
                    y[p] = bundle.savings(p, k) * ratio * terminal;
                }
            }
            surface.fits[k] = fit_node(x, y, options);
        }
    });
    return surface;
}

}  // namespace

double NodeFit::eval_x(double x) const {
    if (coefficients.size() <= 1) {
        return coefficients.empty() ? 0.0 : coefficients[0];
    }
    auto inside = [this](double xi) {
        if (basis == RegressionBasis::polynomial) {
            double acc = 0.0;
            for (std::size_t j = coefficients.size(); j-- > 0;) {
                acc = acc * xi + coefficients[j];
            }
            return acc;
        }
        std::array<double, 4> nb{};
        const std::size_t first = spline_basis(knots, xi, nb);
        double acc = 0.0;
        for (std::size_t a = 0; a < 4; ++a) {
            acc += coefficients[first + a] * nb[a];
        }
        return acc;
    };
    if (x >= lo && x <= hi) {
        return inside(x);
    }
    // linear continuation from the nearest end of the sampled range
    const double edge = x < lo ? lo : hi;
    const double step = 1e-4 * (hi - lo);
    const double slope = x < lo ? (inside(lo + step) - inside(lo)) / step
                                : (inside(hi) - inside(hi - step)) / step;
    return inside(edge) + slope * (x - edge);
}

double NodeFit::operator()(double s) const {
    if (coefficients.size() <= 1) {
        return eval_x(0.0);
    }
    return eval_x((std::log(s) - center) / scale);
}

double ValueSurface::delta(std::size_t k, double s) const {
    const NodeFit& f = fits[k];
    if (f.coefficients.size() <= 1) {
        return 0.0;
    }
    const double h = kDeltaBump * s;
    return (f(s + h) - f(s - h)) / (2.0 * h);
}

ValueSurface value_function(const MarketModel& model, const Claim& claim, const PathBundle& bundle,
                            const SurfaceOptions& options) {
    require_one_dimensional(model);
    const std::vector<double> h = claim_samples(claim, bundle);
    const auto& grid = bundle.grid;

    if (const auto c = savings_units(h, bundle)) {
        ValueSurface surface;
        surface.grid = grid;
        for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
            surface.fits.push_back(constant_fit(*c * bundle.savings(0, k)));
        }
        return surface;
    }

    ValueSurface surface = fit_surface(h, bundle, options, nullptr);
    if (options.control_passes == 0 || !use_control(bundle)) {
        return surface;
    }
    const double v = compensated_sum(deflated_samples(claim, bundle)) / static_cast<double>(bundle.n_paths);
    for (std::size_t pass = 0; pass < options.control_passes; ++pass) {
        const PathTable pilot = share_hedge(surface, v, bundle);
        surface = fit_surface(h, bundle, options, &pilot);
        surface.control_passes_used = pass + 1;
    }
    return surface;
}

FairnessVerdict fairness_check(const PathTable& benchmarked, const SimulationGrid& grid) {
    if (benchmarked.nodes() != grid.n_nodes() || benchmarked.width() != 1) {
        throw ConfigError("benchmarked table does not match the grid");
    }
    if (benchmarked.paths() < kMinNumerairePaths) {
        throw ConfigError("fairness check needs at least " + std::to_string(kMinNumerairePaths) +
                          " paths");
    }
    FairnessVerdict v;
    v.means = monitored_means(benchmarked, grid);
    std::vector<double> diff(benchmarked.paths());
    for (std::size_t k : monitoring_nodes(grid)) {
        if (k == 0) {
            continue;
        }
        for (std::size_t p = 0; p < diff.size(); ++p) {
            diff[p] = benchmarked(p, k) - benchmarked(p, 0);
        }
        const SampleSummary s = summarize(diff);
        double z = 0.0;
        if (s.std_error > 0.0) {
            z = std::abs(s.mean) / s.std_error;
        } else if (s.mean != 0.0) {
            z = std::numeric_limits<double>::infinity();
        }
        v.worst_z = std::max(v.worst_z, z);
    }
    v.pass = v.worst_z <= 3.0;
    return v;
}

HedgeResult replicate(const MarketModel& model, const Claim& claim, const PathBundle& bundle,
                      const SurfaceOptions& options) {
    require_one_dimensional(model);
    const auto& grid = bundle.grid;
    const std::size_t n_paths = bundle.n_paths;
    const std::size_t steps = grid.n_steps();

    HedgeResult out;
    out.surface = value_function(model, claim, bundle, options);
    out.initial_capital = real_world_price(model, claim, bundle).value;
    if (!(out.initial_capital > 0.0)) {
        throw NumericalError("claim has zero real-world price; nothing to replicate");
    }
    HedgePath hedge = run_delta_hedge(model, out.surface, out.initial_capital, bundle);
    out.strategy = std::move(hedge.strategy);
    out.wealth = simulate_portfolio(model, Strategy::tabulated("hedge", out.strategy),
                                    out.initial_capital, bundle);

    const std::vector<double> h = claim_samples(claim, bundle);
    out.terminal_error.resize(n_paths);
    std::vector<double> squared(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        out.terminal_error[p] = out.wealth(p, steps) * bundle.savings(p, steps) - h[p];
        squared[p] = out.terminal_error[p] * out.terminal_error[p];
        out.terminal_error_max = std::max(out.terminal_error_max, std::abs(out.terminal_error[p]));
    }
    out.terminal_error_rms = std::sqrt(compensated_sum(squared) / static_cast<double>(n_paths));

    std::vector<double> column(n_paths);
    for (std::size_t k = 0; k < steps; ++k) {
        for (std::size_t p = 0; p < n_paths; ++p) {
            column[p] = hedge.deltas(p, k);
        }
        out.mean_delta.push_back(compensated_sum(column) / static_cast<double>(n_paths));
    }
    for (std::size_t k = 0; k <= steps; ++k) {
        for (std::size_t p = 0; p < n_paths; ++p) {
            const double target = k == 0       ? out.initial_capital
                                  : k == steps ? h[p]
                                               : out.surface.value(k, bundle.assets(p, k));
            const double e = out.wealth(p, k) * bundle.savings(p, k) - target;
            column[p] = e * e;
        }
        out.rms_error_running.push_back(std::sqrt(compensated_sum(column) / static_cast<double>(n_paths)));
    }

    if (n_paths >= kMinNumerairePaths) {
        out.fairness = fairness_check(benchmark(out.wealth, bundle.require_gop()), grid);
    }
    return out;
}

PathTable rerun_hedge(const MarketModel& model, const HedgeResult& hedge, double v,
                      const PathBundle& bundle) {
    return simulate_portfolio(model, Strategy::tabulated("hedge", hedge.strategy), v, bundle);
}

}  // namespace bp

#include "bp/sde_engine.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>

#include "bp/errors.hpp"
#include "bp/gop.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/parallel.hpp"
#include "bp/rng.hpp"

namespace bp {

namespace {

constexpr std::size_t kCounterLimit = std::numeric_limits<std::uint32_t>::max();

void check_counter_space(std::size_t n_paths, std::size_t n_steps, std::size_t width) {
    if (n_paths > kCounterLimit || n_steps > kCounterLimit || width > kCounterLimit) {
        throw ConfigError("simulation size exceeds the 32-bit counter space of the generator");
    }
}

void check_bundle_shape(const MarketModel& model, const PathBundle& bundle) {
    const auto& g = bundle.grid;
    if (bundle.assets.paths() != bundle.n_paths || bundle.assets.nodes() != g.n_nodes() ||
        bundle.assets.width() != model.n_assets) {
        throw ConfigError("asset table does not match the bundle grid or model");
    }
    if (bundle.drivers.paths() != bundle.n_paths || bundle.drivers.nodes() != g.n_steps() ||
        bundle.drivers.width() != model.n_drivers) {
        throw ConfigError("driver table does not match the bundle grid or model");
    }
}

void load_state(const PathTable& assets, std::size_t p, std::size_t k, Vector& state) {
    const auto row = assets.row(p, k);
    for (std::size_t i = 0; i < row.size(); ++i) {
        state(static_cast<Eigen::Index>(i)) = row[i];
    }
}

void check_snapshot(const CoefficientSnapshot& snap, double t) {
    if (!std::isfinite(snap.r) || !snap.mu.allFinite() || !snap.sigma.allFinite()) {
        throw NumericalError("non-finite coefficient encountered at t = " + std::to_string(t));
    }
}

}  // namespace

SimulationGrid::SimulationGrid(std::vector<double> times, Spacing spacing)
    : times_(std::move(times)), spacing_(spacing) {}

SimulationGrid SimulationGrid::uniform(double horizon, std::size_t n_steps) {
    if (n_steps == 0) {
        throw ConfigError("grid needs at least one step");
    }
    if (!std::isfinite(horizon) || !(horizon > 0.0)) {
        throw ConfigError("grid horizon must be finite and positive");
    }
    std::vector<double> t(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k) {
        t[k] = horizon * static_cast<double>(k) / static_cast<double>(n_steps);
    }
    t.back() = horizon;
    return SimulationGrid(std::move(t), Spacing::uniform);
}

SimulationGrid SimulationGrid::geometric_near_zero(double horizon, std::size_t levels,
                                                   std::size_t steps_per_band) {
    if (steps_per_band == 0) {
        throw ConfigError("geometric grid needs at least one step per band");
    }
    if (!std::isfinite(horizon) || !(horizon > 0.0)) {
        throw ConfigError("grid horizon must be finite and positive");
    }
    std::vector<double> t{0.0};
    for (std::size_t j = levels; j-- > 0;) {
        const double a = std::ldexp(horizon, -static_cast<int>(j + 1));
        const double b = std::ldexp(horizon, -static_cast<int>(j));
        if (t.size() == 1) {
            t.push_back(a);
        }
        for (std::size_t i = 1; i <= steps_per_band; ++i) {
            t.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(steps_per_band));
        }
        t.back() = b;
    }
    if (levels == 0) {
        t.push_back(horizon);
    }
    return SimulationGrid(std::move(t), Spacing::geometric_near_zero);
}

SimulationGrid SimulationGrid::from_times(std::vector<double> times, Spacing spacing) {
    if (times.size() < 2 || times.front() != 0.0) {
        throw ConfigError("grid must start at 0 and contain at least two nodes");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] > times[k - 1]) || !std::isfinite(times[k])) {
            throw ConfigError("grid times must be finite and strictly increasing");
        }
    }
    return SimulationGrid(std::move(times), spacing);
}

PathTable::PathTable(std::size_t paths, std::size_t nodes, std::size_t width, double fill)
    : paths_(paths), nodes_(nodes), width_(width), data_(paths * nodes * width, fill) {}

std::vector<double> PathTable::column(std::size_t k, std::size_t i) const {
    std::vector<double> out(paths_);
    for (std::size_t p = 0; p < paths_; ++p) {
        out[p] = (*this)(p, k, i);
    }
    return out;
}

Strategy Strategy::constant(std::string label, Vector pi) {
    return functional(std::move(label),
                      [pi = std::move(pi)](double, const Vector&, Vector& out) { out = pi; });
}

Strategy Strategy::functional(std::string label, Function f) {
    Strategy s;
    s.label = std::move(label);
    s.rule = std::move(f);
    return s;
}

Strategy Strategy::tabulated(std::string label, PathTable table) {
    Strategy s;
    s.label = std::move(label);
    s.rule = std::move(table);
    return s;
}

const PathTable& PathBundle::require_deflator() const {
    if (!deflator) {
        throw ConfigError("bundle has no deflator paths");
    }
    return *deflator;
}

const PathTable& PathBundle::require_gop() const {
    if (!gop) {
        throw ConfigError("bundle has no growth-optimal portfolio paths");
    }
    return *gop;
}

double coefficient_time(const MarketModel& model, const SimulationGrid& grid, std::size_t k) {
    if (k == 0 && model.singular_at_zero) {
        return grid.time(1);
    }
    return grid.time(k);
}

PathTable simulate_drivers(std::uint64_t seed, const SimulationGrid& grid, std::size_t n_paths,
                           std::size_t n_drivers) {
    if (n_paths == 0) {
        throw ConfigError("need at least one path");
    }
    if (n_drivers == 0) {
        throw ConfigError("need at least one driver");
    }
    const std::size_t n_steps = grid.n_steps();
    check_counter_space(n_paths, n_steps, n_drivers);
    PathTable dw(n_paths, n_steps, n_drivers);
    parallel_for_paths(n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            for (std::size_t k = 0; k < n_steps; ++k) {
                const double scale = std::sqrt(grid.dt(k));
                for (std::size_t j = 0; j < n_drivers; ++j) {
                    dw(p, k, j) = scale * counter_normal(seed, Stream::drivers,
                                                         static_cast<std::uint32_t>(p),
                                                         static_cast<std::uint32_t>(k),
                                                         static_cast<std::uint32_t>(j));
                }
            }
        }
    });
    return dw;
}

PathTable simulate_assets(const MarketModel& model, const PathTable& drivers,
                          const SimulationGrid& grid) {
    validate_model(model);
    const std::size_t n = model.n_assets;
    const std::size_t d = model.n_drivers;
    if (drivers.nodes() != grid.n_steps() || drivers.width() != d || drivers.paths() == 0) {
        throw ConfigError("driver table shape does not match grid and model");
    }
    const std::size_t n_paths = drivers.paths();
    PathTable assets(n_paths, grid.n_nodes(), n);
    parallel_for_paths(n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state = model.initial_prices;
        for (std::size_t p = begin; p < end; ++p) {
            state = model.initial_prices;
            for (std::size_t i = 0; i < n; ++i) {
                assets(p, 0, i) = state(static_cast<Eigen::Index>(i));
            }
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                const double dt = grid.dt(k);
                model.coefficients(t, state, snap);
                check_snapshot(snap, t);
                const auto dw = drivers.row(p, k);
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    double var = 0.0;
                    double diffusion = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double s = snap.sigma(ii, static_cast<Eigen::Index>(j));
                        var += s * s;
                        diffusion += s * dw[j];
                    }
                    const double next =
                        state(ii) * std::exp((snap.mu(ii) - 0.5 * var) * dt + diffusion);
                    if (!std::isfinite(next) || !(next > 0.0)) {
                        throw NumericalError("asset state escaped the positive domain at t = " +
                                             std::to_string(grid.time(k + 1)));
                    }
                    assets(p, k + 1, i) = next;
                }
                load_state(assets, p, k + 1, state);
            }
        }
    });
    return assets;
}

ExactPaths simulate_assets_exact(const MarketModel& model, std::uint64_t seed,
                                 const SimulationGrid& grid, std::size_t n_paths) {
    validate_model(model);
    if (!model.exact_sampler) {
        throw ConfigError("model '" + model.name + "' has no exact sampler");
    }
    if (model.n_assets != model.n_drivers) {
        throw ModelError("implied driver increments need as many drivers as assets");
    }
    if (n_paths == 0) {
        throw ConfigError("need at least one path");
    }
    const ExactSampler& sampler = *model.exact_sampler;
    const std::size_t n = model.n_assets;
    const std::size_t n_steps = grid.n_steps();
    check_counter_space(n_paths, n_steps, sampler.noise_dim);

    ExactPaths out{PathTable(n_paths, grid.n_nodes(), n), PathTable(n_paths, n_steps, n)};
    parallel_for_paths(n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(n));
        Vector next(static_cast<Eigen::Index>(n));
        Vector rhs(static_cast<Eigen::Index>(n));
        std::vector<double> noise(sampler.noise_dim);
        for (std::size_t p = begin; p < end; ++p) {
            Vector latent = sampler.init(model.initial_prices);
            state = model.initial_prices;
            for (std::size_t i = 0; i < n; ++i) {
                out.assets(p, 0, i) = state(static_cast<Eigen::Index>(i));
            }
            for (std::size_t k = 0; k < n_steps; ++k) {
                const double dt = grid.dt(k);
                const double scale = std::sqrt(dt);
                for (std::size_t j = 0; j < sampler.noise_dim; ++j) {
                    noise[j] = scale * counter_normal(seed, Stream::drivers,
                                                      static_cast<std::uint32_t>(p),
                                                      static_cast<std::uint32_t>(k),
                                                      static_cast<std::uint32_t>(j));
                }
                sampler.advance(latent, noise);
                sampler.observe(latent, next);
                if (!next.allFinite() || (next.array() <= 0.0).any()) {
                    throw NumericalError("exact sampler left the positive domain");
                }
                const double t = coefficient_time(model, grid, k);
                model.coefficients(t, state, snap);
                check_snapshot(snap, t);
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    const double var = snap.sigma.row(ii).squaredNorm();
                    rhs(ii) = std::log(next(ii) / state(ii)) - (snap.mu(ii) - 0.5 * var) * dt;
                    out.assets(p, k + 1, i) = next(ii);
                }
                if (n == 1) {
                    if (snap.sigma(0, 0) == 0.0) {
                        throw ModelError("zero volatility: driver increments are not identified");
                    }
                    out.drivers(p, k, 0) = rhs(0) / snap.sigma(0, 0);
                } else {
                    Eigen::FullPivLU<Matrix> lu(snap.sigma);
                    if (!lu.isInvertible()) {
                        throw ModelError("singular volatility: driver increments are not identified");
                    }
                    const Vector dw = lu.solve(rhs);
                    for (std::size_t j = 0; j < n; ++j) {
                        out.drivers(p, k, j) = dw(static_cast<Eigen::Index>(j));
                    }
                }
                state = next;
            }
        }
    });
    return out;
}

PathTable simulate_savings(const MarketModel& model, const PathTable& assets,
                           const SimulationGrid& grid) {
    if (assets.nodes() != grid.n_nodes() || assets.width() != model.n_assets) {
        throw ConfigError("asset table does not match grid and model");
    }
    PathTable savings(assets.paths(), grid.n_nodes(), 1);
    parallel_for_paths(assets.paths(), [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(model.n_assets));
        for (std::size_t p = begin; p < end; ++p) {
            double log_s0 = 0.0;
            savings(p, 0) = 1.0;
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                load_state(assets, p, k, state);
                model.coefficients(t, state, snap);
                if (!std::isfinite(snap.r)) {
                    throw NumericalError("non-finite short rate at t = " + std::to_string(t));
                }
                log_s0 += snap.r * grid.dt(k);
                savings(p, k + 1) = std::exp(log_s0);
            }
        }
    });
    return savings;
}

PathTable simulate_portfolio(const MarketModel& model, const Strategy& strategy, double v,
                             const PathBundle& bundle) {
    if (!std::isfinite(v) || !(v > 0.0)) {
        throw ConfigError("initial capital must be positive");
    }
    check_bundle_shape(model, bundle);
    const auto& grid = bundle.grid;
    const std::size_t n = model.n_assets;
    const std::size_t d = model.n_drivers;
    const auto* table = std::get_if<PathTable>(&strategy.rule);
    const auto* func = std::get_if<Strategy::Function>(&strategy.rule);
    if (table != nullptr && (table->paths() != bundle.n_paths || table->nodes() != grid.n_steps() ||
                             table->width() != n)) {
        throw ConfigError("strategy table '" + strategy.label + "' does not match the bundle grid");
    }
    if (func != nullptr && !*func) {
        throw ConfigError("strategy '" + strategy.label + "' has no rule");
    }

    PathTable out(bundle.n_paths, grid.n_nodes(), 1);
    parallel_for_paths(bundle.n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(n));
        Vector pi(static_cast<Eigen::Index>(n));
        Vector exposure(static_cast<Eigen::Index>(d));
        for (std::size_t p = begin; p < end; ++p) {
            double log_v = 0.0;
            double quad_var = 0.0;
            out(p, 0) = v * std::exp(log_v);
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                const double dt = grid.dt(k);
                load_state(bundle.assets, p, k, state);
                model.coefficients(t, state, snap);
                check_snapshot(snap, t);
                if (table != nullptr) {
                    for (std::size_t i = 0; i < n; ++i) {
                        pi(static_cast<Eigen::Index>(i)) = (*table)(p, k, i);
                    }
                } else {
                    (*func)(t, state, pi);
                }
                if (static_cast<std::size_t>(pi.size()) != n || !pi.allFinite()) {
                    throw NumericalError("strategy '" + strategy.label +
                                         "' produced a non-finite or mis-sized value");
                }
                exposure.noalias() = snap.sigma.transpose() * pi;
                double excess = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    excess += pi(ii) * (snap.mu(ii) - snap.r);
                }
                const double q = exposure.squaredNorm();
                const auto dw = bundle.drivers.row(p, k);
                double diffusion = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    diffusion += exposure(static_cast<Eigen::Index>(j)) * dw[j];
                }
                quad_var += q * dt;
                log_v += (excess - 0.5 * q) * dt + diffusion;
                if (!std::isfinite(log_v) || !std::isfinite(quad_var)) {
                    throw NumericalError("portfolio '" + strategy.label + "' is not admissible on path " +
                                         std::to_string(p));
                }
                out(p, k + 1) = v * std::exp(log_v);
            }
        }
    });
    return out;
}

namespace detail {

// Per-path exp(sign * sum_k [theta' dW + ||theta||^2 dt / 2]). sign = -1 gives the
// deflator, sign = +1 the discounted growth-optimal portfolio.
PathTable mpr_exponential(const MarketModel& model, const PathBundle& bundle, double sign) {
    check_bundle_shape(model, bundle);
    const auto& grid = bundle.grid;
    const std::size_t d = model.n_drivers;
    PathTable out(bundle.n_paths, grid.n_nodes(), 1);
    parallel_for_paths(bundle.n_paths, [&](std::size_t begin, std::size_t end) {
        CoefficientSnapshot snap;
        Vector state(static_cast<Eigen::Index>(model.n_assets));
        for (std::size_t p = begin; p < end; ++p) {
            double acc = 0.0;
            out(p, 0) = 1.0;
            for (std::size_t k = 0; k < grid.n_steps(); ++k) {
                const double t = coefficient_time(model, grid, k);
                load_state(bundle.assets, p, k, state);
                model.coefficients(t, state, snap);
                check_snapshot(snap, t);
                const Vector theta = market_price_of_risk(snap, model.rank_deficient_allowed);
                const auto dw = bundle.drivers.row(p, k);
                double stochastic = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    stochastic += theta(static_cast<Eigen::Index>(j)) * dw[j];
                }
                const double inc = stochastic + 0.5 * theta.squaredNorm() * grid.dt(k);
                acc += inc;
                const double value = std::exp(sign * acc);
                if (!std::isfinite(value) || !(value > 0.0)) {
                    throw NumericalError("market-price-of-risk exponential overflowed on path " +
                                         std::to_string(p));
                }
                out(p, k + 1) = value;
            }
        }
    });
    return out;
}

}  // namespace detail

PathTable simulate_deflator(const MarketModel& model, const PathBundle& bundle) {
    return detail::mpr_exponential(model, bundle, -1.0);
}

PathBundle simulate_bundle(const MarketModel& model, const SimulationGrid& grid,
                           std::uint64_t seed, std::size_t n_paths, BundleOptions options) {
    validate_model(model);
    if (std::abs(grid.horizon() - model.horizon) > 1e-12 * model.horizon) {
        throw ConfigError("grid horizon does not match the model horizon");
    }
    PathBundle bundle;
    bundle.seed = seed;
    bundle.grid = grid;
    bundle.n_paths = n_paths;
    if (options.use_exact_sampler && model.exact_sampler) {
        ExactPaths exact = simulate_assets_exact(model, seed, grid, n_paths);
        bundle.assets = std::move(exact.assets);
        bundle.drivers = std::move(exact.drivers);
        bundle.exact_sampled = true;
    } else {
        bundle.drivers = simulate_drivers(seed, grid, n_paths, model.n_drivers);
        bundle.assets = simulate_assets(model, bundle.drivers, grid);
    }
    bundle.savings = simulate_savings(model, bundle.assets, grid);
    if (options.with_deflator) {
        bundle.deflator = simulate_deflator(model, bundle);
    }
    if (options.with_gop) {
        bundle.gop = simulate_gop(model, bundle);
    }
    return bundle;
}

void write_path_dump(const PathBundle& bundle, std::ostream& out) {
    const std::size_t n = bundle.assets.width();
    out << "path,time";
    for (std::size_t i = 0; i < n; ++i) {
        out << ",asset_" << (i + 1);
    }
    out << ",deflator,gop\n";
    out << std::setprecision(17);
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        for (std::size_t k = 0; k < bundle.grid.n_nodes(); ++k) {
            out << p << ',' << bundle.grid.time(k);
            for (std::size_t i = 0; i < n; ++i) {
                out << ',' << bundle.assets(p, k, i);
            }
            out << ',' << (bundle.deflator ? (*bundle.deflator)(p, k) : 0.0) << ','
                << (bundle.gop ? (*bundle.gop)(p, k) : 0.0) << '\n';
        }
    }
}

}  // namespace bp

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bp/linalg.hpp"
#include "bp/market_models.hpp"

namespace bp {

class SimulationGrid {
public:
    enum class Spacing { uniform, geometric_near_zero };

    // n_steps equal steps on [0, horizon].
    static SimulationGrid uniform(double horizon, std::size_t n_steps);

    // Dyadic bands [T 2^-(j+1), T 2^-j], j = 0..levels-1, each split into
    // steps_per_band equal steps, plus a single first step [0, T 2^-levels].
    static SimulationGrid geometric_near_zero(double horizon, std::size_t levels,
                                              std::size_t steps_per_band);

    // Arbitrary strictly increasing nodes starting at 0.
    static SimulationGrid from_times(std::vector<double> times, Spacing spacing);

    std::size_t n_steps() const noexcept { return times_.size() - 1; }
    std::size_t n_nodes() const noexcept { return times_.size(); }
    double horizon() const noexcept { return times_.back(); }
    double time(std::size_t k) const { return times_[k]; }
    double dt(std::size_t k) const { return times_[k + 1] - times_[k]; }
    std::span<const double> times() const noexcept { return times_; }
    Spacing spacing() const noexcept { return spacing_; }

    bool operator==(const SimulationGrid&) const = default;

private:
    SimulationGrid(std::vector<double> times, Spacing spacing);

    std::vector<double> times_{0.0, 1.0};
    Spacing spacing_ = Spacing::uniform;
};

// Dense per-path table: paths x nodes x width, row-major with width fastest.
class PathTable {
public:
    PathTable() = default;
    PathTable(std::size_t paths, std::size_t nodes, std::size_t width, double fill = 0.0);

    std::size_t paths() const noexcept { return paths_; }
    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t width() const noexcept { return width_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t p, std::size_t k, std::size_t i = 0) {
        return data_[(p * nodes_ + k) * width_ + i];
    }
    double operator()(std::size_t p, std::size_t k, std::size_t i = 0) const {
        return data_[(p * nodes_ + k) * width_ + i];
    }

    std::span<double> row(std::size_t p, std::size_t k) {
        return {data_.data() + (p * nodes_ + k) * width_, width_};
    }
    std::span<const double> row(std::size_t p, std::size_t k) const {
        return {data_.data() + (p * nodes_ + k) * width_, width_};
    }

    // Entry (., k, i) across all paths.
    std::vector<double> column(std::size_t k, std::size_t i = 0) const;

    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const PathTable& other) const noexcept {
        return paths_ == other.paths_ && nodes_ == other.nodes_ && width_ == other.width_;
    }

private:
    std::size_t paths_ = 0;
    std::size_t nodes_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

// Proportion-of-wealth rule pi: either a function of (t, state) or a per-path,
// per-step table (paths x n_steps x N) holding the value used on each step.
struct Strategy {
    using Function = std::function<void(double t, const Vector& state, Vector& out)>;

    std::string label;
    std::variant<Function, PathTable> rule;

    static Strategy constant(std::string label, Vector pi);
    static Strategy functional(std::string label, Function f);
    static Strategy tabulated(std::string label, PathTable table);
};

struct PathBundle {
    std::uint64_t seed = 0;
    SimulationGrid grid = SimulationGrid::uniform(1.0, 1);
    std::size_t n_paths = 0;
    PathTable drivers;   // paths x n_steps x d
    PathTable assets;    // paths x n_nodes x N
    PathTable savings;   // paths x n_nodes x 1, S^0 with S^0_0 = 1
    std::optional<PathTable> deflator;  // Z-hat
    std::optional<PathTable> gop;       // discounted growth-optimal portfolio
    std::map<std::string, PathTable> portfolios;
    bool exact_sampled = false;

    double terminal_asset(std::size_t p, std::size_t i = 0) const {
        return assets(p, grid.n_steps(), i);
    }
    const PathTable& require_deflator() const;
    const PathTable& require_gop() const;
};

// Time at which coefficients of step k are frozen: t_k, except that models with
// a drift singularity at zero use t_1 for the first step.
double coefficient_time(const MarketModel& model, const SimulationGrid& grid, std::size_t k);

// Gaussian increments N(0, dt_k), keyed on (seed, path, step, driver).
PathTable simulate_drivers(std::uint64_t seed, const SimulationGrid& grid, std::size_t n_paths,
                           std::size_t n_drivers);

// Log-space Euler scheme with coefficients frozen at the left endpoint.
PathTable simulate_assets(const MarketModel& model, const PathTable& drivers,
                          const SimulationGrid& grid);

struct ExactPaths {
    PathTable assets;
    PathTable drivers;  // implied increments reproducing `assets` under the log-Euler map
};

// Samples node values with the model's exact sampler, then backs out the driver
// increments that the log-Euler step would need to hit them. Requires N == d.
ExactPaths simulate_assets_exact(const MarketModel& model, std::uint64_t seed,
                                 const SimulationGrid& grid, std::size_t n_paths);

// S^0_t = exp(sum r dt) along each asset path.
PathTable simulate_savings(const MarketModel& model, const PathTable& assets,
                           const SimulationGrid& grid);

// Discounted wealth of the self-financing portfolio with proportions `strategy`
// and initial capital v, in log space. The table for v equals v times the
// table for 1 after a single multiplication.
PathTable simulate_portfolio(const MarketModel& model, const Strategy& strategy, double v,
                             const PathBundle& bundle);

// Z-hat = stochastic exponential of -int theta' dW.
PathTable simulate_deflator(const MarketModel& model, const PathBundle& bundle);

struct BundleOptions {
    bool use_exact_sampler = true;  // when the model provides one
    bool with_deflator = true;
    bool with_gop = true;
};

PathBundle simulate_bundle(const MarketModel& model, const SimulationGrid& grid,
                           std::uint64_t seed, std::size_t n_paths, BundleOptions options = {});

namespace detail {
// exp(sign * sum_k [theta' dW + ||theta||^2 dt / 2]) per path, shared by the
// deflator (sign -1) and the growth-optimal portfolio (sign +1).
PathTable mpr_exponential(const MarketModel& model, const PathBundle& bundle, double sign);
}  // namespace detail

// CSV rows (path, time, asset_1..N, deflator, gop), path-major.
void write_path_dump(const PathBundle& bundle, std::ostream& out);

}  // namespace bp

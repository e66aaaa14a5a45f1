#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bp/linalg.hpp"
#include "bp/market_models.hpp"
#include "bp/sde_engine.hpp"

namespace bp {

// Drift of log V^pi: r + pi'(mu - r 1) - pi' sigma sigma' pi / 2.
double growth_rate(const CoefficientSnapshot& snapshot, const Vector& pi);

// pi* = (sigma sigma')^{-1} (mu - r 1), the unique maximiser of growth_rate.
Vector gop_strategy(const CoefficientSnapshot& snapshot);

// pi* as a functional strategy evaluated along paths.
Strategy gop_strategy_rule(const MarketModel& model);

// log V*_{k+1} = log V*_k + ||theta||^2 dt / 2 + theta' dW, V*_0 = 1 (discounted).
PathTable simulate_gop(const MarketModel& model, const PathBundle& bundle);

// V / V* elementwise.
PathTable benchmark(const PathTable& portfolio, const PathTable& gop);

// Node indices at the grid deciles 0, n/10, ..., n (deduplicated).
std::vector<std::size_t> monitoring_nodes(const SimulationGrid& grid, std::size_t count = 10);

struct MonitoredMeans {
    std::vector<double> times;
    std::vector<double> means;
    std::vector<double> std_errors;
};

MonitoredMeans monitored_means(const PathTable& table, const SimulationGrid& grid);

struct NumeraireVerdict {
    bool pass = false;
    // max over s < t of mean(V_t) - mean(V_s) - 3 se(mean(V_t)); pass iff <= kNumeraireRoundoff
    double worst_margin = 0.0;
    MonitoredMeans means;
};

inline constexpr std::size_t kMinNumerairePaths = 1000;
// Rises this small are rounding in the benchmarked table, e.g. the GOP against itself.
inline constexpr double kNumeraireRoundoff = 1e-12;

// Supermartingale check of a benchmarked table at the monitoring times.
NumeraireVerdict numeraire_test(const PathTable& benchmarked, const SimulationGrid& grid);

// True when the last monitored mean sits more than 3 paired standard errors below the
// first and no consecutive pair rises by more than 3 paired standard errors.
bool strictly_decreasing(const PathTable& benchmarked, const SimulationGrid& grid);

}  // namespace bp

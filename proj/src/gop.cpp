#include "bp/gop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bp/errors.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/stats.hpp"

namespace bp {

namespace {

Vector excess_return(const CoefficientSnapshot& snap) {
    return snap.mu - Vector::Constant(snap.mu.size(), snap.r);
}

// Mean and standard error of V(., b) - V(., a) over paths.
SampleSummary paired_difference(const PathTable& table, std::size_t a, std::size_t b) {
    std::vector<double> diff(table.paths());
    for (std::size_t p = 0; p < table.paths(); ++p) {
        diff[p] = table(p, b) - table(p, a);
    }
    return summarize(diff);
}

void check_table(const PathTable& table, const SimulationGrid& grid) {
    if (table.nodes() != grid.n_nodes() || table.width() != 1) {
        throw ConfigError("benchmarked table does not match the grid");
    }
    if (table.paths() < kMinNumerairePaths) {
        throw ConfigError("numeraire test needs at least " + std::to_string(kMinNumerairePaths) +
                          " paths");
    }
}

}  // namespace

double growth_rate(const CoefficientSnapshot& snapshot, const Vector& pi) {
    if (pi.size() != snapshot.mu.size() || snapshot.sigma.rows() != pi.size()) {
        throw ConfigError("strategy dimension does not match the snapshot");
    }
    const Vector exposure = snapshot.sigma.transpose() * pi;
    return snapshot.r + pi.dot(excess_return(snapshot)) - 0.5 * exposure.squaredNorm();
}

Vector gop_strategy(const CoefficientSnapshot& snapshot) {
    if (snapshot.sigma.rows() != snapshot.mu.size()) {
        throw ConfigError("volatility matrix has wrong number of rows");
    }
    if (!full_row_rank(snapshot.sigma)) {
        throw ModelError("volatility matrix is rank deficient: growth-optimal strategy undefined");
    }
    const Matrix gram = snapshot.sigma * snapshot.sigma.transpose();
    const Vector pi = gram.llt().solve(excess_return(snapshot));
    if (!pi.allFinite()) {
        throw NumericalError("non-finite growth-optimal strategy");
    }
    return pi;
}

Strategy gop_strategy_rule(const MarketModel& model) {
    return Strategy::functional("gop", [model](double t, const Vector& state, Vector& out) {
        CoefficientSnapshot snap;
        model.coefficients(t, state, snap);
        out = gop_strategy(snap);
    });
}

PathTable simulate_gop(const MarketModel& model, const PathBundle& bundle) {
    return detail::mpr_exponential(model, bundle, 1.0);
}

PathTable benchmark(const PathTable& portfolio, const PathTable& gop) {
    if (!portfolio.same_shape(gop) || portfolio.width() != 1) {
        throw ConfigError("portfolio and growth-optimal tables differ in shape");
    }
    PathTable out(portfolio.paths(), portfolio.nodes(), 1);
    for (std::size_t p = 0; p < portfolio.paths(); ++p) {
        for (std::size_t k = 0; k < portfolio.nodes(); ++k) {
            out(p, k) = portfolio(p, k) / gop(p, k);
        }
    }
    return out;
}

std::vector<std::size_t> monitoring_nodes(const SimulationGrid& grid, std::size_t count) {
    const std::size_t n = grid.n_steps();
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i <= count; ++i) {
        const std::size_t k = (n * i + count / 2) / count;
        if (nodes.empty() || nodes.back() != k) {
            nodes.push_back(k);
        }
    }
    return nodes;
}

MonitoredMeans monitored_means(const PathTable& table, const SimulationGrid& grid) {
    if (table.nodes() != grid.n_nodes() || table.width() != 1) {
        throw ConfigError("table does not match the grid");
    }
    MonitoredMeans out;
    for (std::size_t k : monitoring_nodes(grid)) {
        const SampleSummary s = summarize(table.column(k));
        out.times.push_back(grid.time(k));
        out.means.push_back(s.mean);
        out.std_errors.push_back(s.std_error);
    }
    return out;
}

NumeraireVerdict numeraire_test(const PathTable& benchmarked, const SimulationGrid& grid) {
    check_table(benchmarked, grid);
    NumeraireVerdict v;
    v.means = monitored_means(benchmarked, grid);
    v.worst_margin = -std::numeric_limits<double>::infinity();
    const auto& m = v.means;
    for (std::size_t a = 0; a < m.means.size(); ++a) {
        for (std::size_t b = a + 1; b < m.means.size(); ++b) {
            v.worst_margin = std::max(v.worst_margin, m.means[b] - m.means[a] - 3.0 * m.std_errors[b]);
        }
    }
    v.pass = v.worst_margin <= kNumeraireRoundoff;
    return v;
}

bool strictly_decreasing(const PathTable& benchmarked, const SimulationGrid& grid) {
    check_table(benchmarked, grid);
    const auto nodes = monitoring_nodes(grid);
    for (std::size_t a = 0; a + 1 < nodes.size(); ++a) {
        const SampleSummary s = paired_difference(benchmarked, nodes[a], nodes[a + 1]);
        if (s.mean > 3.0 * s.std_error) {
            return false;
        }
    }
    const SampleSummary total = paired_difference(benchmarked, nodes.front(), nodes.back());
    return total.mean + 3.0 * total.std_error < 0.0;
}

}  // namespace bp

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bp/gop.hpp"
#include "bp/market_models.hpp"
#include "bp/pricing.hpp"
#include "bp/sde_engine.hpp"

namespace bp {

inline constexpr std::size_t kDefaultRegressionDegree = 4;
inline constexpr std::size_t kDefaultSplineKnots = 16;
inline constexpr double kRidge = 1e-8;
inline constexpr double kDeltaBump = 0.01;
inline constexpr double kMaxDifferenceQuotient = 1e6;

enum class RegressionBasis {
    polynomial,  // 1, x, ..., x^degree
    spline,      // cubic B-splines with interior knots at quantiles of x
};

struct SurfaceOptions {
    RegressionBasis basis = RegressionBasis::spline;
    std::size_t degree = kDefaultRegressionDegree;  // polynomial basis
    std::size_t knots = kDefaultSplineKnots;        // spline basis
    // Refits that subtract the deflated gains of the previous pass's hedge from the
    // target. Only used when Z_T looks like a true martingale.
    std::size_t control_passes = 4;
};

// Fitted function of x = (log S - center) / scale at one grid node. Outside the
// sampled range [lo, hi] the fit is continued linearly.
struct NodeFit {
    RegressionBasis basis = RegressionBasis::polynomial;
    double center = 0.0;
    double scale = 1.0;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> knots;  // full clamped knot vector, spline basis
    std::vector<double> coefficients;
    double r_squared = 1.0;

    double operator()(double s) const;
    double eval_x(double x) const;
};

// Nominal value v(t_k, S) of the claim, one fit per grid node.
struct ValueSurface {
    SimulationGrid grid = SimulationGrid::uniform(1.0, 1);
    std::vector<NodeFit> fits;
    std::size_t control_passes_used = 0;

    double value(std::size_t k, double s) const { return fits[k](s); }
    // Central difference with step kDeltaBump * s.
    double delta(std::size_t k, double s) const;
    // Fraction of wealth delta * s / v read off the surface.
    double fraction(std::size_t k, double s) const { return delta(k, s) * s / value(k, s); }
    // Benchmarked value M = Z_t v / S^0_t given the path's Z_t and S^0_t.
    double benchmarked(std::size_t k, double s, double z, double savings) const {
        return z * value(k, s) / savings;
    }
};

// Regresses the conditional value E[Z_T H / S^0_T | S_t] S^0_t / Z_t on S at every
// node. Needs d = N = 1 and a deflator table.
ValueSurface value_function(const MarketModel& model, const Claim& claim, const PathBundle& bundle,
                            const SurfaceOptions& options = {});

struct FairnessVerdict {
    bool pass = false;
    double worst_z = 0.0;  // max |mean(V_t - V_0)| / se over monitoring times
    MonitoredMeans means;
};

// Means of a benchmarked table constant across monitoring times within 3 se bands.
FairnessVerdict fairness_check(const PathTable& benchmarked, const SimulationGrid& grid);

struct HedgeResult {
    double initial_capital = 0.0;
    PathTable strategy;  // paths x n_steps x 1, fraction of wealth in the asset
    PathTable wealth;    // discounted hedge wealth
    std::vector<double> terminal_error;  // V_T - H, nominal
    double terminal_error_rms = 0.0;
    double terminal_error_max = 0.0;
    std::vector<double> mean_delta;         // per step
    std::vector<double> rms_error_running;  // per node, V_t - v(t, S_t) nominal
    std::optional<FairnessVerdict> fairness;  // absent below kMinNumerairePaths paths
    ValueSurface surface;
};

// Fraction-of-wealth delta hedge started from the real-world price.
HedgeResult replicate(const MarketModel& model, const Claim& claim, const PathBundle& bundle,
                      const SurfaceOptions& options = {});

// Same strategy table, different initial capital.
PathTable rerun_hedge(const MarketModel& model, const HedgeResult& hedge, double v,
                      const PathBundle& bundle);

}  // namespace bp

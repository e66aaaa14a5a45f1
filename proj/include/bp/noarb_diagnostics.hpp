#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bp/linalg.hpp"
#include "bp/market_models.hpp"
#include "bp/sde_engine.hpp"

namespace bp {

// theta = sigma' (sigma sigma')^{-1} (mu - r 1). With allow_rank_deficient the
// Moore-Penrose solution is returned instead of a rank error.
Vector market_price_of_risk(const CoefficientSnapshot& snapshot, bool allow_rank_deficient = false);

struct SamplePoint {
    double t = 0.0;
    Vector state;
};

struct IncreasingProfitVerdict {
    bool found = false;
    double residual_norm = 0.0;  // largest ||p_t|| over the sampled points
    Vector residual;             // p_t at the worst point
    Vector strategy;             // p_t / ||p_t|| when found
    SamplePoint point;
};

inline constexpr double kIncreasingProfitTolerance = 1e-9;

// Projects mu - r 1 onto ker(sigma') at one point.
IncreasingProfitVerdict detect_increasing_profit(const CoefficientSnapshot& snapshot);

IncreasingProfitVerdict detect_increasing_profit(const MarketModel& model,
                                                 std::span<const SamplePoint> points);

// -(log v + log(1 - v)) / v, the leverage turning an increasing profit into a
// super-replication of V_T - 1 from capital v.
double arbitrage_scaling(double v);

Strategy exploit_increasing_profit(const Strategy& pi, double v);

enum class Viability { viable, divergent_mpr_integral, undetermined };

struct ViabilityReport {
    Viability verdict = Viability::undetermined;
    std::vector<double> profile;         // mean over paths of sum ||theta||^2 dt, per level
    std::vector<double> increments;      // profile[l] - profile[l-1]
    std::vector<double> path_integrals;  // per-path sums on the bundle grid (level 0)
    std::string note;
};

// Thresholds of the refinement-profile decision.
inline constexpr double kGrowthPersistence = 0.9;
inline constexpr double kStabilityTolerance = 0.01;

// Riemann sums of ||theta||^2 on the bundle grid, then with the first step refined
// into `refinement_levels` successive dyadic bands of `band_steps` steps each. The
// refined piece of every path is one Brownian bridge on the finest sub-grid, pinned to
// the bundle's first increment; coarser levels read it at their own points.
ViabilityReport viability_check(const MarketModel& model, const PathBundle& bundle,
                                std::size_t refinement_levels, std::size_t band_steps = 128);

struct DeflatorSpec {
    std::function<Vector(double t, const Vector& state)> gamma;
    std::string description;
};

// gamma = theta, the minimal martingale deflator.
DeflatorSpec minimal_deflator(const MarketModel& model);

struct StrategyDriftTest {
    std::string label;
    double slope = 0.0;
    double t_statistic = 0.0;
    bool drift_free = false;
};

struct DeflatorValidation {
    bool valid = false;
    bool drift_equation_ok = false;
    double max_drift_residual = 0.0;  // max ||sigma gamma - (mu - r 1)||
    bool minimality_ok = false;       // ||gamma|| >= ||theta|| everywhere sampled
    double min_norm_excess = 0.0;     // min (||gamma|| - ||theta||)
    std::vector<StrategyDriftTest> strategies;
    PathTable deflator;  // D, empty when the drift equation fails
    std::string reason;
};

inline constexpr double kDriftEquationTolerance = 1e-9;
inline constexpr double kDriftTStatistic = 4.0;

// Checks sigma gamma = mu - r 1 at every node, simulates D = E(-int gamma' dW) and
// regresses the increments of D * V^pi on dt for each strategy.
DeflatorValidation validate_deflator(const DeflatorSpec& spec, const MarketModel& model,
                                     const PathBundle& bundle, std::span<const Strategy> strategies);

enum class MartingaleVerdict { true_martingale_consistent, strict_local_martingale, inconclusive };

struct MartingaleGap {
    double mean = 0.0;
    double std_error = 0.0;
    MartingaleVerdict verdict = MartingaleVerdict::inconclusive;
};

inline constexpr std::size_t kMinMartingaleSamples = 1000;

// Strict if mean + 5 se < 1, consistent if |mean - 1| <= 3 se.
MartingaleGap martingale_gap(std::span<const double> terminal_samples);

struct DiagnosticsReport {
    bool rank_ok = true;
    IncreasingProfitVerdict increasing_profit;
    ViabilityReport viability;
    MartingaleGap deflator;
};

struct DiagnoseOptions {
    std::uint64_t seed = 1;
    std::size_t n_paths = 2000;
    std::size_t n_steps = 256;
    std::size_t refinement_levels = 5;
};

DiagnosticsReport diagnose(const MarketModel& model, const DiagnoseOptions& options);

std::string to_string(Viability v);
std::string to_string(MartingaleVerdict v);
nlohmann::json to_json(const DiagnosticsReport& report);

}  // namespace bp

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bp/market_models.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/sde_engine.hpp"

namespace bp {

// Nominal payoff H of a path. Must be non-negative.
struct Claim {
    using Payoff = std::function<double(const PathBundle& bundle, std::size_t path)>;

    std::string label;
    Payoff payoff;
    bool path_dependent = false;
};

// call:K, put:K (on asset 1, or asset i with call:K:i), zcb, savings, benchmark,
// asset[:i], poly:c0,c1,...,cn (sum c_j S_T^j on asset 1).
Claim parse_claim(std::string_view spec);
// A string spec or {"type": ..., ...} object.
Claim claim_from_json(const nlohmann::json& doc);

// H per path; throws on negative or non-finite values.
std::vector<double> claim_samples(const Claim& claim, const PathBundle& bundle);

// H Z_T / S^0_T per path.
std::vector<double> deflated_samples(const Claim& claim, const PathBundle& bundle);
// H / V*_T per path with V*_T = S^0_T * (discounted GOP); needs the GOP table.
std::vector<double> benchmarked_samples(const Claim& claim, const PathBundle& bundle);

enum class PricingMethod { real_world, risk_neutral_comparison, actuarial_zcb, upper_hedging };
std::string to_string(PricingMethod m);

struct PriceEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    PricingMethod method = PricingMethod::real_world;
    double kurtosis = 0.0;  // of the per-path samples
};

// Sample kurtosis above which the error bar is flagged as unreliable.
inline constexpr double kKurtosisWarning = 100.0;

PriceEstimate estimate_from_samples(std::span<const double> samples, PricingMethod method);

// E[H Z_T / S^0_T].
PriceEstimate real_world_price(const MarketModel& model, const Claim& claim, const PathBundle& bundle);

// E[Z_T / S^0_T] at the grid node with time `maturity`.
PriceEstimate zero_coupon_bond(const MarketModel& model, const PathBundle& bundle, double maturity);

// Same estimator as real_world_price; only for complete markets (d == N).
PriceEstimate upper_hedging_price(const MarketModel& model, const Claim& claim,
                                  const PathBundle& bundle);

struct RiskNeutralComparison {
    PriceEstimate real_world;
    MartingaleGap gap;
    // E[Z_T H / S^0_T] under the change of measure, when Z looks like a true martingale
    std::optional<PriceEstimate> reweighted;
    // 1 - E[Z_T]: risk-neutral minus real-world value of H = S^0_T
    double discrepancy = 0.0;
    double discrepancy_std_error = 0.0;
    std::string note;
};

RiskNeutralComparison risk_neutral_comparison(const MarketModel& model, const Claim& claim,
                                              const PathBundle& bundle);

}  // namespace bp

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "bp/market_models.hpp"
#include "bp/pricing.hpp"
#include "bp/sde_engine.hpp"

namespace bp {

struct UtilitySpec {
    enum class Kind { log, power, custom };
    using Fn = std::function<double(double)>;

    Kind kind = Kind::log;
    double exponent = 0.0;  // power only, in (0, 1)
    std::string label;
    Fn value;
    Fn marginal;          // U'
    Fn inverse_marginal;  // I = (U')^{-1}
};

UtilitySpec log_utility();
// U(x) = x^a / a.
UtilitySpec power_utility(double a);
UtilitySpec custom_utility(std::string label, UtilitySpec::Fn value, UtilitySpec::Fn marginal,
                           UtilitySpec::Fn inverse_marginal);
// "log" or "power:a".
UtilitySpec parse_utility(std::string_view spec);

// Throws ConfigError unless U' is positive and strictly decreasing, I inverts U'
// on [1e-4, 1e4], and (custom only) U'(1e-8) > 1e6 and U'(1e8) < 1e-6.
void validate_utility(const UtilitySpec& u);

// Kurtosis of the dual integrand above which finiteness is not taken as verified.
inline constexpr double kDualKurtosisLimit = 100.0;

struct DualValue {
    double value = 0.0;
    double std_error = 0.0;
    double kurtosis = 0.0;
    bool hypothesis_verified = true;  // kurtosis < kDualKurtosisLimit
};

// W(y) = E[Z_T I(y / (v V*_T))], V* the discounted GOP with unit capital.
DualValue dual_value(const UtilitySpec& u, double v, double y, const PathBundle& bundle);

inline constexpr double kLagrangeTolerance = 1e-8;
inline constexpr std::size_t kMaxBracketSteps = 200;

// y* with |W(y*) - v| <= kLagrangeTolerance * v on the bundle's fixed sample.
double solve_lagrange(const UtilitySpec& u, double v, const PathBundle& bundle);

// I(y* / (v V*_T)) per path, discounted.
std::vector<double> optimal_terminal_wealth(const UtilitySpec& u, double v, double y_star,
                                            const PathBundle& bundle);

struct IndifferenceResult {
    double y_star = 0.0;
    PriceEstimate price;
    DualValue dual;  // W(y*)
};

// E[U'(V) H/S^0_T] / E[U'(V) V / v] with V the optimal discounted terminal wealth.
IndifferenceResult indifference_price(const UtilitySpec& u, double v, const Claim& claim,
                                      const PathBundle& bundle);

// Central difference in eps of E[U((v - eps p) / v * V + eps H/S^0_T)] at eps = 0;
// vanishes when p is the indifference price.
double marginal_utility_gap(const UtilitySpec& u, double v, const Claim& claim,
                            const PathBundle& bundle, double p, double eps = 1e-4);

// E[U(x)] over per-path discounted wealth.
double expected_utility(const UtilitySpec& u, std::span<const double> wealth);

}  // namespace bp

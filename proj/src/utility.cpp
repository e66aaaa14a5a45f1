#include "bp/utility.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <string>

#include "bp/errors.hpp"
#include "bp/parallel.hpp"
#include "bp/stats.hpp"

namespace bp {

namespace {

struct TerminalData {
    std::vector<double> deflator;
    std::vector<double> gop;
};

TerminalData terminal_data(const PathBundle& bundle) {
    const std::size_t n = bundle.grid.n_steps();
    return {bundle.require_deflator().column(n), bundle.require_gop().column(n)};
}

void check_capital(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError("initial capital must be positive");
    }
}

std::vector<double> dual_integrand(const UtilitySpec& u, double v, double y, const TerminalData& td) {
    std::vector<double> x(td.deflator.size());
    parallel_for_paths(x.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            x[p] = td.deflator[p] * u.inverse_marginal(y / (v * td.gop[p]));
        }
    });
    for (double xi : x) {
        if (!std::isfinite(xi)) {
            throw NumericalError("inverse marginal utility is not finite");
        }
    }
    return x;
}

DualValue summarize_dual(std::span<const double> x) {
    const SampleSummary s = summarize(x);
    return {s.mean, s.std_error, s.kurtosis, s.kurtosis < kDualKurtosisLimit};
}

}  // namespace

UtilitySpec log_utility() {
    UtilitySpec u;
    u.kind = UtilitySpec::Kind::log;
    u.label = "log";
    u.value = [](double x) { return std::log(x); };
    u.marginal = [](double x) { return 1.0 / x; };
    u.inverse_marginal = [](double y) { return 1.0 / y; };
    return u;
}

UtilitySpec power_utility(double a) {
    if (!(a > 0.0 && a < 1.0)) {
        throw ConfigError("power utility exponent must lie in (0, 1)");
    }
    UtilitySpec u;
    u.kind = UtilitySpec::Kind::power;
    u.exponent = a;
    std::string text(32, '\0');
    const auto res = std::to_chars(text.data(), text.data() + text.size(), a);
    text.resize(static_cast<std::size_t>(res.ptr - text.data()));
    u.label = "power:" + text;
    u.value = [a](double x) { return std::pow(x, a) / a; };
    u.marginal = [a](double x) { return std::pow(x, a - 1.0); };
    u.inverse_marginal = [a](double y) { return std::pow(y, 1.0 / (a - 1.0)); };
    return u;
}

UtilitySpec custom_utility(std::string label, UtilitySpec::Fn value, UtilitySpec::Fn marginal,
                           UtilitySpec::Fn inverse_marginal) {
    UtilitySpec u;
    u.kind = UtilitySpec::Kind::custom;
    u.label = std::move(label);
    u.value = std::move(value);
    u.marginal = std::move(marginal);
    u.inverse_marginal = std::move(inverse_marginal);
    validate_utility(u);
    return u;
}

UtilitySpec parse_utility(std::string_view spec) {
    if (spec == "log") {
        return log_utility();
    }
    if (spec.starts_with("power:")) {
        const std::string_view num = spec.substr(6);
        double a = 0.0;
        const auto res = std::from_chars(num.data(), num.data() + num.size(), a);
        if (res.ec != std::errc() || res.ptr != num.data() + num.size()) {
            throw ConfigError("bad power utility exponent '" + std::string(num) + "'");
        }
        return power_utility(a);
    }
    throw ConfigError("unknown utility '" + std::string(spec) + "' (expected log or power:a)");
}

void validate_utility(const UtilitySpec& u) {
    if (!u.value || !u.marginal || !u.inverse_marginal) {
        throw ConfigError("utility '" + u.label + "' is missing a function");
    }
    double prev = std::numeric_limits<double>::infinity();
    for (int i = -40; i <= 40; ++i) {
        const double x = std::pow(10.0, i / 10.0);
        const double m = u.marginal(x);
        if (!(m > 0.0) || !std::isfinite(m)) {
            throw ConfigError("marginal utility of '" + u.label + "' is not positive");
        }
        if (!(m < prev)) {
            throw ConfigError("marginal utility of '" + u.label + "' is not strictly decreasing");
        }
        prev = m;
        const double back = u.inverse_marginal(m);
        if (!(std::abs(back - x) <= 1e-9 * x)) {
            throw ConfigError("inverse marginal of '" + u.label + "' does not invert U'");
        }
    }
    if (u.kind == UtilitySpec::Kind::custom && !(u.marginal(1e-8) > 1e6 && u.marginal(1e8) < 1e-6)) {
        throw ConfigError("utility '" + u.label + "' fails the Inada conditions");
    }
}

DualValue dual_value(const UtilitySpec& u, double v, double y, const PathBundle& bundle) {
    check_capital(v);
    if (!(y > 0.0) || !std::isfinite(y)) {
        throw ConfigError("dual argument y must be positive");
    }
    const TerminalData td = terminal_data(bundle);
    return summarize_dual(dual_integrand(u, v, y, td));
}

double solve_lagrange(const UtilitySpec& u, double v, const PathBundle& bundle) {
    check_capital(v);
    const TerminalData td = terminal_data(bundle);
    auto w = [&](double y) {
        return compensated_sum(dual_integrand(u, v, y, td)) / static_cast<double>(td.deflator.size());
    };
    const double tol = kLagrangeTolerance * v;

    double y = 1.0;
    double wy = w(y);
    if (std::abs(wy - v) <= tol) {
        return y;
    }
    // W is decreasing: double or halve y until the target is bracketed.
    const bool grow = wy > v;
    double lo = y;
    double hi = y;
    bool bracketed = false;
    for (std::size_t i = 0; i < kMaxBracketSteps && !bracketed; ++i) {
        y = grow ? y * 2.0 : y * 0.5;
        wy = w(y);
        if (std::abs(wy - v) <= tol) {
            return y;
        }
        if (grow) {
            (wy > v ? lo : hi) = y;
            bracketed = wy < v;
        } else {
            (wy < v ? hi : lo) = y;
            bracketed = wy > v;
        }
    }
    if (!bracketed) {
        throw NumericalError("could not bracket the Lagrange multiplier within " +
                             std::to_string(kMaxBracketSteps) + " doublings");
    }
    for (int i = 0; i < 400; ++i) {
        const double mid = std::sqrt(lo * hi);
        const double wm = w(mid);
        if (std::abs(wm - v) <= tol) {
            return mid;
        }
        if (wm > v) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (!(hi > lo * (1.0 + 1e-15))) {
            break;
        }
    }
    throw NumericalError("bisection for the Lagrange multiplier stalled before tolerance");
}

std::vector<double> optimal_terminal_wealth(const UtilitySpec& u, double v, double y_star,
                                            const PathBundle& bundle) {
    check_capital(v);
    const std::vector<double> gop = bundle.require_gop().column(bundle.grid.n_steps());
    std::vector<double> wealth(gop.size());
    for (std::size_t p = 0; p < gop.size(); ++p) {
        wealth[p] = u.inverse_marginal(y_star / (v * gop[p]));
        if (!std::isfinite(wealth[p])) {
            throw NumericalError("non-finite optimal wealth");
        }
    }
    return wealth;
}

IndifferenceResult indifference_price(const UtilitySpec& u, double v, const Claim& claim,
                                      const PathBundle& bundle) {
    IndifferenceResult out;
    out.y_star = solve_lagrange(u, v, bundle);
    out.dual = dual_value(u, v, out.y_star, bundle);
    const std::vector<double> wealth = optimal_terminal_wealth(u, v, out.y_star, bundle);
    const std::vector<double> h = claim_samples(claim, bundle);
    const std::size_t n = bundle.grid.n_steps();
    std::vector<double> num(wealth.size());
    std::vector<double> den(wealth.size());
    for (std::size_t p = 0; p < wealth.size(); ++p) {
        const double m = u.marginal(wealth[p]);
        num[p] = m * h[p] / bundle.savings(p, n);
        den[p] = m * wealth[p] / v;
    }
    const double num_mean = compensated_sum(num) / static_cast<double>(num.size());
    const double den_mean = compensated_sum(den) / static_cast<double>(den.size());
    if (!(den_mean > 0.0)) {
        throw NumericalError("indifference price denominator vanished");
    }
    out.price.value = num_mean / den_mean;
    // U'(X*) is proportional to Z_T, so the budget constraint solved by y* pins the
    // denominator and only the numerator carries sampling error
    out.price.std_error = summarize(num).std_error / den_mean;
    out.price.n_paths = num.size();
    out.price.method = PricingMethod::real_world;
    out.price.kurtosis = summarize(num).kurtosis;
    return out;
}

double marginal_utility_gap(const UtilitySpec& u, double v, const Claim& claim,
                            const PathBundle& bundle, double p, double eps) {
    const double y_star = solve_lagrange(u, v, bundle);
    const std::vector<double> wealth = optimal_terminal_wealth(u, v, y_star, bundle);
    const std::vector<double> h = claim_samples(claim, bundle);
    const std::size_t n = bundle.grid.n_steps();
    auto objective = [&](double e) {
        std::vector<double> x(wealth.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = (v - e * p) / v * wealth[i] + e * h[i] / bundle.savings(i, n);
        }
        return expected_utility(u, x);
    };
    return (objective(eps) - objective(-eps)) / (2.0 * eps);
}

double expected_utility(const UtilitySpec& u, std::span<const double> wealth) {
    std::vector<double> x(wealth.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(wealth[i] > 0.0)) {
            throw NumericalError("utility evaluated at non-positive wealth");
        }
        x[i] = u.value(wealth[i]);
    }
    return compensated_sum(x) / static_cast<double>(x.size());
}

}  // namespace bp

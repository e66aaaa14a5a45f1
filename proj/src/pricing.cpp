#include "bp/pricing.hpp"

#include <charconv>
#include <cmath>
#include <string>

#include "bp/errors.hpp"
#include "bp/parallel.hpp"
#include "bp/stats.hpp"

namespace bp {

namespace {

double parse_number(std::string_view text, std::string_view what) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, value);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(value)) {
        throw ConfigError("bad " + std::string(what) + " in claim spec: '" + std::string(text) + "'");
    }
    return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = text.find(sep, start);
        parts.push_back(text.substr(start, pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return parts;
}

std::size_t parse_asset_index(std::string_view text) {
    const double x = parse_number(text, "asset index");
    if (x < 1.0 || x != std::floor(x)) {
        throw ConfigError("asset index must be a positive integer");
    }
    return static_cast<std::size_t>(x) - 1;
}

void check_asset(const PathBundle& bundle, std::size_t i) {
    if (i >= bundle.assets.width()) {
        throw ConfigError("claim refers to asset " + std::to_string(i + 1) + " but the model has " +
                          std::to_string(bundle.assets.width()));
    }
}

double terminal_savings(const PathBundle& bundle, std::size_t p) {
    return bundle.savings(p, bundle.grid.n_steps());
}

}  // namespace

Claim parse_claim(std::string_view spec) {
    const auto parts = split(spec, ':');
    const std::string_view kind = parts[0];
    Claim c;
    c.label = std::string(spec);
    if (kind == "call" || kind == "put") {
        if (parts.size() < 2 || parts.size() > 3) {
            throw ConfigError("expected " + std::string(kind) + ":K[:asset]");
        }
        const double strike = parse_number(parts[1], "strike");
        if (strike < 0.0) {
            throw ConfigError("strike must be non-negative");
        }
        const std::size_t i = parts.size() == 3 ? parse_asset_index(parts[2]) : 0;
        const bool call = kind == "call";
        c.payoff = [strike, i, call](const PathBundle& b, std::size_t p) {
            check_asset(b, i);
            const double s = b.terminal_asset(p, i);
            return call ? std::max(s - strike, 0.0) : std::max(strike - s, 0.0);
        };
    } else if (kind == "zcb") {
        if (parts.size() != 1) {
            throw ConfigError("zcb takes no arguments");
        }
        c.payoff = [](const PathBundle&, std::size_t) { return 1.0; };
    } else if (kind == "savings") {
        if (parts.size() != 1) {
            throw ConfigError("savings takes no arguments");
        }
        c.payoff = [](const PathBundle& b, std::size_t p) { return terminal_savings(b, p); };
    } else if (kind == "benchmark") {
        if (parts.size() != 1) {
            throw ConfigError("benchmark takes no arguments");
        }
        c.payoff = [](const PathBundle& b, std::size_t p) {
            return terminal_savings(b, p) * b.require_gop()(p, b.grid.n_steps());
        };
    } else if (kind == "asset") {
        if (parts.size() > 2) {
            throw ConfigError("expected asset[:i]");
        }
        const std::size_t i = parts.size() == 2 ? parse_asset_index(parts[1]) : 0;
        c.payoff = [i](const PathBundle& b, std::size_t p) {
            check_asset(b, i);
            return b.terminal_asset(p, i);
        };
    } else if (kind == "poly") {
        if (parts.size() != 2) {
            throw ConfigError("expected poly:c0,c1,...");
        }
        std::vector<double> coeffs;
        for (auto token : split(parts[1], ',')) {
            coeffs.push_back(parse_number(token, "coefficient"));
        }
        c.payoff = [coeffs](const PathBundle& b, std::size_t p) {
            const double s = b.terminal_asset(p, 0);
            double acc = 0.0;
            for (std::size_t j = coeffs.size(); j-- > 0;) {
                acc = acc * s + coeffs[j];
            }
            return acc;
        };
    } else {
        throw ConfigError("unknown claim '" + std::string(spec) + "'");
    }
    return c;
}

Claim claim_from_json(const nlohmann::json& doc) {
    if (doc.is_string()) {
        return parse_claim(doc.get<std::string>());
    }
    if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string()) {
        throw ConfigError("claim must be a string or an object with a 'type'");
    }
    std::string spec = doc["type"].get<std::string>();
    if (doc.contains("strike")) {
        spec += ":" + doc["strike"].dump();
    }
    if (doc.contains("coefficients")) {
        spec += ":";
        bool first = true;
        for (const auto& x : doc["coefficients"]) {
            spec += (first ? "" : ",") + x.dump();
            first = false;
        }
    }
    if (doc.contains("asset")) {
        spec += ":" + doc["asset"].dump();
    }
    return parse_claim(spec);
}

std::vector<double> claim_samples(const Claim& claim, const PathBundle& bundle) {
    if (!claim.payoff) {
        throw ConfigError("claim has no payoff");
    }
    std::vector<double> h(bundle.n_paths);
    parallel_for_paths(bundle.n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            h[p] = claim.payoff(bundle, p);
        }
    });
    for (std::size_t p = 0; p < h.size(); ++p) {
        if (!std::isfinite(h[p])) {
            throw NumericalError("claim '" + claim.label + "' is not finite on path " + std::to_string(p));
        }
        if (h[p] < 0.0) {
            throw ConfigError("claim '" + claim.label + "' is negative on path " + std::to_string(p));
        }
    }
    return h;
}

std::vector<double> deflated_samples(const Claim& claim, const PathBundle& bundle) {
    const PathTable& z = bundle.require_deflator();
    std::vector<double> x = claim_samples(claim, bundle);
    const std::size_t n = bundle.grid.n_steps();
    for (std::size_t p = 0; p < x.size(); ++p) {
        x[p] = x[p] * z(p, n) / terminal_savings(bundle, p);
        if (!std::isfinite(x[p])) {
            throw NumericalError("non-finite deflated payoff on path " + std::to_string(p));
        }
    }
    return x;
}

std::vector<double> benchmarked_samples(const Claim& claim, const PathBundle& bundle) {
    const PathTable& g = bundle.require_gop();
    std::vector<double> x = claim_samples(claim, bundle);
    const std::size_t n = bundle.grid.n_steps();
    for (std::size_t p = 0; p < x.size(); ++p) {
        x[p] = x[p] / (terminal_savings(bundle, p) * g(p, n));
        if (!std::isfinite(x[p])) {
            throw NumericalError("non-finite benchmarked payoff on path " + std::to_string(p));
        }
    }
    return x;
}

std::string to_string(PricingMethod m) {
    switch (m) {
        case PricingMethod::real_world:
            return "real_world";
        case PricingMethod::risk_neutral_comparison:
            return "risk_neutral_comparison";
        case PricingMethod::actuarial_zcb:
            return "actuarial_zcb";
        case PricingMethod::upper_hedging:
            return "upper_hedging";
    }
    return "real_world";
}

PriceEstimate estimate_from_samples(std::span<const double> samples, PricingMethod method) {
    if (samples.empty()) {
        throw ConfigError("no samples to price from");
    }
    const SampleSummary s = summarize(samples);
    return {s.mean, s.std_error, s.n, method, s.kurtosis};
}

PriceEstimate real_world_price(const MarketModel& model, const Claim& claim, const PathBundle& bundle) {
    if (bundle.assets.width() != model.n_assets) {
        throw ConfigError("bundle does not match the model");
    }
    return estimate_from_samples(deflated_samples(claim, bundle), PricingMethod::real_world);
}

PriceEstimate zero_coupon_bond(const MarketModel& model, const PathBundle& bundle, double maturity) {
    if (bundle.assets.width() != model.n_assets) {
        throw ConfigError("bundle does not match the model");
    }
    const auto& grid = bundle.grid;
    std::size_t node = grid.n_nodes();
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
        if (std::abs(grid.time(k) - maturity) <= 1e-12 * std::max(1.0, maturity)) {
            node = k;
            break;
        }
    }
    if (node == grid.n_nodes()) {
        throw ConfigError("bond maturity is not a grid node");
    }
    const PathTable& z = bundle.require_deflator();
    std::vector<double> x(bundle.n_paths);
    for (std::size_t p = 0; p < x.size(); ++p) {
        x[p] = z(p, node) / bundle.savings(p, node);
    }
    return estimate_from_samples(x, PricingMethod::actuarial_zcb);
}

PriceEstimate upper_hedging_price(const MarketModel& model, const Claim& claim,
                                  const PathBundle& bundle) {
    if (model.n_assets != model.n_drivers) {
        throw ModelError("upper hedging price needs a complete market with as many drivers as assets");
    }
    PriceEstimate rw = real_world_price(model, claim, bundle);
    PriceEstimate uh = estimate_from_samples(deflated_samples(claim, bundle), PricingMethod::upper_hedging);
    if (std::abs(uh.value - rw.value) > 1e-12 * std::max(1.0, std::abs(rw.value))) {
        throw NumericalError("upper hedging and real-world estimators disagree");
    }
    return uh;
}

RiskNeutralComparison risk_neutral_comparison(const MarketModel& model, const Claim& claim,
                                              const PathBundle& bundle) {
    RiskNeutralComparison out;
    out.real_world = real_world_price(model, claim, bundle);
    const std::vector<double> zt = bundle.require_deflator().column(bundle.grid.n_steps());
    out.gap = martingale_gap(zt);
    std::vector<double> shortfall(zt.size());
    for (std::size_t p = 0; p < zt.size(); ++p) {
        shortfall[p] = 1.0 - zt[p];
    }
    const SampleSummary s = summarize(shortfall);
    out.discrepancy = s.mean;
    out.discrepancy_std_error = s.std_error;
    switch (out.gap.verdict) {
        case MartingaleVerdict::true_martingale_consistent:
            out.reweighted = estimate_from_samples(deflated_samples(claim, bundle),
                                                   PricingMethod::risk_neutral_comparison);
            out.note = "deflator consistent with a true martingale: risk-neutral and real-world prices coincide";
            break;
        case MartingaleVerdict::strict_local_martingale:
            out.note = "deflator is a strict local martingale: the risk-neutral value of the savings "
                       "account exceeds its real-world value by 1 - E[Z_T]";
            break;
        case MartingaleVerdict::inconclusive:
            out.note = "martingale gap inconclusive at this sample size";
            break;
    }
    return out;
}

}  // namespace bp

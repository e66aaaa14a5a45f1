#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bp/linalg.hpp"

namespace bp {

// Coefficients of the asset dynamics
//     dS^i = S^i ( mu^i dt + sum_j sigma^{ij} dW^j ),   dS^0 = S^0 r dt
// evaluated at one (t, state).
struct CoefficientSnapshot {
    double r = 0.0;
    Vector mu;
    Matrix sigma;
};

// Fills a snapshot in place. Called from path-parallel loops, so it must be pure.
using CoefficientFn = std::function<void(double t, const Vector& state, CoefficientSnapshot& out)>;

// Exact-in-law transition sampler driven by an auxiliary Gaussian vector.
// The latent state is advanced by `noise` (already scaled by sqrt(dt)) and the
// asset prices are read off it with `observe`.
struct ExactSampler {
    std::size_t latent_dim = 0;
    std::size_t noise_dim = 0;
    std::function<Vector(const Vector& initial_prices)> init;
    std::function<void(Vector& latent, std::span<const double> noise)> advance;
    std::function<void(const Vector& latent, Vector& prices)> observe;
};

struct MarketModel {
    std::string name;
    std::size_t n_assets = 0;
    std::size_t n_drivers = 0;
    CoefficientFn coefficients;
    Vector initial_prices;
    double horizon = 1.0;
    std::optional<ExactSampler> exact_sampler;
    bool rank_deficient_allowed = false;
    // Drift undefined at t = 0; the first step evaluates at the right endpoint.
    bool singular_at_zero = false;
    // Constant coefficients: {"name", "params"} in `config` rebuilds the model.
    bool serializable = false;
    nlohmann::json config;
};

// Throws ConfigError unless dimensions, initial prices and horizon are valid.
void validate_model(const MarketModel& model);

// Evaluates (r, mu, sigma) at (t, state) with full domain, finiteness and rank checks.
CoefficientSnapshot eval_coefficients(const MarketModel& model, double t, const Vector& state);

// Builds one of: black_scholes, bessel3, exploding_mpr, custom_multi.
MarketModel builtin_model(std::string_view name, const nlohmann::json& params);

// Parameters used when only a model name is supplied on the command line.
nlohmann::json default_params(std::string_view name);

// {"name": ..., "params": {...}}; a missing "params" falls back to default_params.
MarketModel model_from_json(const nlohmann::json& doc);

nlohmann::json model_to_json(const MarketModel& model);

}  // namespace bp

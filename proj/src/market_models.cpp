#include "bp/market_models.hpp"

#include <cmath>
#include <string>

#include "bp/errors.hpp"

namespace bp {

namespace {

using nlohmann::json;

double require_number(const json& params, const char* key) {
    if (!params.contains(key)) {
        throw ConfigError(std::string("missing model parameter '") + key + "'");
    }
    const json& v = params.at(key);
    if (!v.is_number()) {
        throw ConfigError(std::string("model parameter '") + key + "' must be a number");
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
        throw ConfigError(std::string("model parameter '") + key + "' is not finite");
    }
    return x;
}

double require_positive(const json& params, const char* key) {
    const double x = require_number(params, key);
    if (!(x > 0.0)) {
        throw ConfigError(std::string("model parameter '") + key + "' must be positive");
    }
    return x;
}

std::size_t require_count(const json& params, const char* key) {
    const double x = require_number(params, key);
    if (x < 1.0 || x != std::floor(x)) {
        throw ConfigError(std::string("model parameter '") + key + "' must be a positive integer");
    }
    return static_cast<std::size_t>(x);
}

Vector read_vector(const json& params, const char* key, std::size_t n) {
    if (!params.contains(key)) {
        throw ConfigError(std::string("missing model parameter '") + key + "'");
    }
    const json& v = params.at(key);
    Vector out(static_cast<Eigen::Index>(n));
    if (v.is_number()) {
        out.setConstant(v.get<double>());
        return out;
    }
    if (!v.is_array() || v.size() != n) {
        throw ConfigError(std::string("model parameter '") + key + "' must have length " +
                          std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        out(static_cast<Eigen::Index>(i)) = v.at(i).get<double>();
    }
    if (!out.allFinite()) {
        throw ConfigError(std::string("model parameter '") + key + "' is not finite");
    }
    return out;
}

Matrix read_matrix(const json& params, const char* key, std::size_t rows, std::size_t cols) {
    if (!params.contains(key)) {
        throw ConfigError(std::string("missing model parameter '") + key + "'");
    }
    const json& v = params.at(key);
    if (!v.is_array() || v.size() != rows) {
        throw ConfigError(std::string("model parameter '") + key + "' must have " +
                          std::to_string(rows) + " rows");
    }
    Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        const json& row = v.at(i);
        if (!row.is_array() || row.size() != cols) {
            throw ConfigError(std::string("model parameter '") + key + "' must have " +
                              std::to_string(cols) + " columns");
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                row.at(j).get<double>();
        }
    }
    if (!out.allFinite()) {
        throw ConfigError(std::string("model parameter '") + key + "' is not finite");
    }
    return out;
}

MarketModel constant_model(std::string name, double r, Vector mu, Matrix sigma, Vector s0,
                           double horizon) {
    MarketModel m;
    m.name = std::move(name);
    m.n_assets = static_cast<std::size_t>(mu.size());
    m.n_drivers = static_cast<std::size_t>(sigma.cols());
    m.initial_prices = std::move(s0);
    m.horizon = horizon;
    m.coefficients = [r, mu = std::move(mu), sigma = std::move(sigma)](
                         double, const Vector&, CoefficientSnapshot& out) {
        out.r = r;
        out.mu = mu;
        out.sigma = sigma;
    };
    return m;
}

MarketModel make_black_scholes(const json& params) {
    const double mu = require_number(params, "mu");
    const double sigma = require_number(params, "sigma");
    const double r = require_number(params, "r");
    const double s = require_positive(params, "s");
    const double horizon = require_positive(params, "T");
    if (sigma == 0.0) {
        throw ConfigError("black_scholes requires sigma != 0");
    }
    MarketModel m = constant_model("black_scholes", r, Vector::Constant(1, mu),
                                   Matrix::Constant(1, 1, sigma), Vector::Constant(1, s), horizon);
    m.serializable = true;
    m.config = {{"name", "black_scholes"},
                {"params", {{"mu", mu}, {"sigma", sigma}, {"r", r}, {"s", s}, {"T", horizon}}}};
    return m;
}

// dS = dt / S + dW, stored in relative form: mu = 1/S^2, sigma = 1/S.
// Exact law: S_t = |x + B_t| with B a 3-d Brownian motion and |x| = s.
MarketModel make_bessel3(const json& params) {
    const double s = require_positive(params, "s");
    const double horizon = require_positive(params, "T");
    MarketModel m;
    m.name = "bessel3";
    m.n_assets = 1;
    m.n_drivers = 1;
    m.initial_prices = Vector::Constant(1, s);
    m.horizon = horizon;
    m.coefficients = [](double, const Vector& state, CoefficientSnapshot& out) {
        const double x = state(0);
        out.r = 0.0;
        out.mu.resize(1);
        out.sigma.resize(1, 1);
        out.mu(0) = 1.0 / (x * x);
        out.sigma(0, 0) = 1.0 / x;
    };
    ExactSampler sampler;
    sampler.latent_dim = 3;
    sampler.noise_dim = 3;
    sampler.init = [](const Vector& s0) {
        Vector latent = Vector::Zero(3);
        latent(0) = s0(0);
        return latent;
    };
    sampler.advance = [](Vector& latent, std::span<const double> noise) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            latent(j) += noise[static_cast<std::size_t>(j)];
        }
    };
    sampler.observe = [](const Vector& latent, Vector& prices) { prices(0) = latent.norm(); };
    m.exact_sampler = std::move(sampler);
    m.config = {{"name", "bessel3"}, {"params", {{"s", s}, {"T", horizon}}}};
    m.serializable = true;
    return m;
}

// dS = S dt / sqrt(t) + S dW: market price of risk 1/sqrt(t), not square integrable at 0.
MarketModel make_exploding_mpr(const json& params) {
    const double s = params.contains("s") ? require_positive(params, "s") : 1.0;
    const double horizon = params.contains("T") ? require_positive(params, "T") : 1.0;
    MarketModel m;
    m.name = "exploding_mpr";
    m.n_assets = 1;
    m.n_drivers = 1;
    m.initial_prices = Vector::Constant(1, s);
    m.horizon = horizon;
    m.singular_at_zero = true;
    m.coefficients = [](double t, const Vector&, CoefficientSnapshot& out) {
        out.r = 0.0;
        out.mu.resize(1);
        out.sigma.resize(1, 1);
        out.mu(0) = 1.0 / std::sqrt(t);
        out.sigma(0, 0) = 1.0;
    };
    m.config = {{"name", "exploding_mpr"}, {"params", {{"s", s}, {"T", horizon}}}};
    m.serializable = true;
    return m;
}

MarketModel make_custom_multi(const json& params) {
    const std::size_t n = require_count(params, "N");
    const std::size_t d = require_count(params, "d");
    const Vector mu = read_vector(params, "mu", n);
    const Matrix sigma = read_matrix(params, "sigma", n, d);
    const double r = params.contains("r") ? require_number(params, "r") : 0.0;
    const Vector s0 = params.contains("s") ? read_vector(params, "s", n) : Vector::Ones(n);
    const double horizon = params.contains("T") ? require_positive(params, "T") : 1.0;
    const bool rank_deficient =
        params.contains("rank_deficient_allowed") && params.at("rank_deficient_allowed").get<bool>();

    MarketModel m = constant_model("custom_multi", r, mu, sigma, s0, horizon);
    m.rank_deficient_allowed = rank_deficient;
    if (!rank_deficient && !full_row_rank(sigma)) {
        throw ModelError("custom_multi: sigma does not have full row rank");
    }
    json mu_json = json::array();
    json s_json = json::array();
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        mu_json.push_back(mu(i));
        s_json.push_back(s0(i));
    }
    json sigma_json = json::array();
    for (Eigen::Index i = 0; i < sigma.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < sigma.cols(); ++j) {
            row.push_back(sigma(i, j));
        }
        sigma_json.push_back(row);
    }
    m.config = {{"name", "custom_multi"},
                {"params",
                 {{"N", n},
                  {"d", d},
                  {"mu", mu_json},
                  {"sigma", sigma_json},
                  {"r", r},
                  {"s", s_json},
                  {"T", horizon},
                  {"rank_deficient_allowed", rank_deficient}}}};
    m.serializable = true;
    return m;
}

}  // namespace

void validate_model(const MarketModel& model) {
    if (model.n_assets == 0 || model.n_drivers == 0) {
        throw ConfigError("model must have at least one asset and one driver");
    }
    if (!model.rank_deficient_allowed && model.n_assets > model.n_drivers) {
        throw ModelError("more assets than drivers: sigma cannot have full row rank");
    }
    if (!model.coefficients) {
        throw ConfigError("model has no coefficient function");
    }
    if (static_cast<std::size_t>(model.initial_prices.size()) != model.n_assets) {
        throw ConfigError("initial price vector has wrong length");
    }
    if (!model.initial_prices.allFinite() || (model.initial_prices.array() <= 0.0).any()) {
        throw ConfigError("initial prices must be strictly positive and finite");
    }
    if (!std::isfinite(model.horizon) || !(model.horizon > 0.0)) {
        throw ConfigError("horizon must be finite and positive");
    }
}

CoefficientSnapshot eval_coefficients(const MarketModel& model, double t, const Vector& state) {
    if (!(t >= 0.0 && t <= model.horizon)) {
        throw ConfigError("evaluation time outside [0, T]");
    }
    if (static_cast<std::size_t>(state.size()) != model.n_assets) {
        throw ConfigError("state has wrong dimension");
    }
    if (!state.allFinite() || (state.array() <= 0.0).any()) {
        throw ConfigError("state must be strictly positive");
    }
    CoefficientSnapshot snap;
    model.coefficients(t, state, snap);
    if (static_cast<std::size_t>(snap.mu.size()) != model.n_assets ||
        static_cast<std::size_t>(snap.sigma.rows()) != model.n_assets ||
        static_cast<std::size_t>(snap.sigma.cols()) != model.n_drivers) {
        throw ConfigError("coefficient dimensions do not match the model");
    }
    if (!std::isfinite(snap.r) || !snap.mu.allFinite() || !snap.sigma.allFinite()) {
        throw NumericalError("non-finite coefficient at t = " + std::to_string(t));
    }
    if (!model.rank_deficient_allowed && !full_row_rank(snap.sigma)) {
        throw ModelError("volatility matrix is rank deficient at t = " + std::to_string(t));
    }
    return snap;
}

MarketModel builtin_model(std::string_view name, const nlohmann::json& params) {
    if (!params.is_object()) {
        throw ConfigError("model params must be a JSON object");
    }
    MarketModel m;
    if (name == "black_scholes") {
        m = make_black_scholes(params);
    } else if (name == "bessel3") {
        m = make_bessel3(params);
    } else if (name == "exploding_mpr") {
        m = make_exploding_mpr(params);
    } else if (name == "custom_multi") {
        m = make_custom_multi(params);
    } else {
        throw ConfigError("unknown model '" + std::string(name) + "'");
    }
    validate_model(m);
    return m;
}

nlohmann::json default_params(std::string_view name) {
    if (name == "black_scholes") {
        return {{"mu", 0.1}, {"sigma", 0.2}, {"r", 0.02}, {"s", 100.0}, {"T", 1.0}};
    }
    if (name == "bessel3") {
        return {{"s", 1.0}, {"T", 1.0}};
    }
    if (name == "exploding_mpr") {
        return {{"s", 1.0}, {"T", 1.0}};
    }
    if (name == "custom_multi") {
        return {{"N", 2},
                {"d", 2},
                {"mu", {0.1, 0.2}},
                {"sigma", {{1.0, 0.0}, {0.0, 2.0}}},
                {"r", 0.0},
                {"s", {1.0, 1.0}},
                {"T", 1.0}};
    }
    throw ConfigError("unknown model '" + std::string(name) + "'");
}

MarketModel model_from_json(const nlohmann::json& doc) {
    if (doc.is_string()) {
        const auto name = doc.get<std::string>();
        return builtin_model(name, default_params(name));
    }
    if (!doc.is_object() || !doc.contains("name") || !doc.at("name").is_string()) {
        throw ConfigError("model spec must be {\"name\": string, \"params\": object}");
    }
    const auto name = doc.at("name").get<std::string>();
    const json params = doc.contains("params") ? doc.at("params") : default_params(name);
    return builtin_model(name, params);
}

nlohmann::json model_to_json(const MarketModel& model) {
    if (!model.serializable) {
        throw ConfigError("model '" + model.name + "' has code-defined coefficients");
    }
    return model.config;
}

}  // namespace bp

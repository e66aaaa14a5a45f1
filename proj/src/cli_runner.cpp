#include "bp/cli_runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bp/errors.hpp"
#include "bp/gop.hpp"
#include "bp/hedging.hpp"
#include "bp/market_models.hpp"
#include "bp/noarb_diagnostics.hpp"
#include "bp/pricing.hpp"
#include "bp/sde_engine.hpp"
#include "bp/stats.hpp"
#include "bp/utility.hpp"

namespace bp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCommands{"diagnose", "simulate", "price", "hedge", "utility", "report"};

// Acceptance targets checked by `report`.
constexpr double kBesselBond = 0.682689492137086;  // 2 Phi(1) - 1
constexpr double kBesselBondTolerance = 0.01;
constexpr double kReferenceCall = 7.965567455405804;  // s = K = 100, sigma = 0.2, r = 0, T = 1

class CsvWriter {
public:
    explicit CsvWriter(const fs::path& path) : out_(path) {
        if (!out_) {
            throw ConfigError("cannot write " + path.string());
        }
        out_ << std::setprecision(17);
    }

    template <typename... Ts>
    void row(const Ts&... cells) {
        bool first = true;
        ((out_ << (first ? "" : ",") << cells, first = false), ...);
        out_ << '\n';
    }

    std::ostream& stream() { return out_; }

private:
    std::ofstream out_;
};

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << doc.dump(2) << '\n';
}

template <typename T>
void read_size(const json& doc, const char* key, T& target) {
    if (!doc.contains(key)) {
        return;
    }
    const json& x = doc[key];
    if (!x.is_number_integer() && !x.is_number_unsigned()) {
        throw ConfigError(std::string("'") + key + "' must be an integer");
    }
    if (x.is_number_integer() && x.get<std::int64_t>() < 0) {
        throw ConfigError(std::string("'") + key + "' must be positive");
    }
    target = x.get<T>();
}

PathBundle make_bundle(const MarketModel& model, const ExperimentConfig& config, bool with_gop = true) {
    BundleOptions options;
    options.use_exact_sampler = config.use_exact_sampler;
    options.with_gop = with_gop;
    return simulate_bundle(model, SimulationGrid::uniform(model.horizon, config.n_steps), config.seed,
                           config.n_paths, options);
}

Strategy parse_strategy(const std::string& spec, const MarketModel& model) {
    if (spec == "gop") {
        return gop_strategy_rule(model);
    }
    if (spec == "savings") {
        return Strategy::constant("savings", Vector::Zero(static_cast<Eigen::Index>(model.n_assets)));
    }
    std::vector<double> weights;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const std::size_t pos = std::min(spec.find(',', start), spec.size());
        double x = 0.0;
        const auto res = std::from_chars(spec.data() + start, spec.data() + pos, x);
        if (res.ec != std::errc() || res.ptr != spec.data() + pos || !std::isfinite(x)) {
            throw ConfigError("unknown strategy '" + spec + "' (gop, savings or comma-separated weights)");
        }
        weights.push_back(x);
        start = pos + 1;
    }
    if (weights.size() == 1 && model.n_assets > 1) {
        weights.assign(model.n_assets, weights[0]);
    }
    if (weights.size() != model.n_assets) {
        throw ConfigError("strategy '" + spec + "' has the wrong number of weights");
    }
    return Strategy::constant(spec, Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size())));
}

json price_row(const std::string& model, const std::string& claim, const PriceEstimate& e,
               std::uint64_t seed) {
    return {{"model", model}, {"claim", claim},       {"method", to_string(e.method)},
            {"value", e.value}, {"stderr", e.std_error}, {"n_paths", e.n_paths},
            {"seed", seed}};
}

void warn_kurtosis(const PriceEstimate& e, const std::string& what, std::vector<std::string>& warnings) {
    if (e.kurtosis > kKurtosisWarning) {
        std::ostringstream msg;
        msg << what << ": sample kurtosis " << e.kurtosis << " exceeds " << kKurtosisWarning
            << "; the standard error may be unreliable";
        warnings.push_back(msg.str());
    }
}

json run_diagnose(const ExperimentConfig& config, const MarketModel& model) {
    DiagnoseOptions options;
    options.seed = config.seed;
    options.n_paths = config.n_paths;
    options.n_steps = config.n_steps;
    options.refinement_levels = config.refinement_levels;
    const DiagnosticsReport report = diagnose(model, options);
    const json doc = to_json(report);
    write_json(config.out_dir / "diagnose.json", doc);
    CsvWriter csv(config.out_dir / "viability_profile.csv");
    csv.row("level", "mean_integral", "increment");
    for (std::size_t l = 0; l < report.viability.profile.size(); ++l) {
        if (l == 0) {
            csv.row(l, report.viability.profile[l], "");
        } else {
            csv.row(l, report.viability.profile[l], report.viability.increments[l - 1]);
        }
    }
    return doc;
}

json run_simulate(const ExperimentConfig& config, const MarketModel& model) {
    const PathBundle bundle = make_bundle(model, config);
    const PathTable& gop = bundle.require_gop();
    CsvWriter csv(config.out_dir / "simulate.csv");
    csv.row("strategy", "time", "mean", "stderr", "min", "max");
    json verdicts = json::object();
    for (const auto& spec : config.strategies) {
        const Strategy strategy = parse_strategy(spec, model);
        const PathTable hat = benchmark(simulate_portfolio(model, strategy, 1.0, bundle), gop);
        for (std::size_t k = 0; k < bundle.grid.n_nodes(); ++k) {
            const SampleSummary s = summarize(hat.column(k));
            csv.row(spec, bundle.grid.time(k), s.mean, s.std_error, s.min, s.max);
        }
        if (bundle.n_paths >= kMinNumerairePaths) {
            const NumeraireVerdict v = numeraire_test(hat, bundle.grid);
            verdicts[spec] = {{"numeraire_test", v.pass ? "pass" : "fail"},
                              {"worst_margin", v.worst_margin}};
        } else {
            verdicts[spec] = {{"numeraire_test", "not_run"}};
        }
    }
    if (config.dump_paths) {
        std::ofstream out(config.out_dir / "paths.csv");
        write_path_dump(bundle, out);
    }
    return {{"strategies", verdicts}};
}

json run_price(const ExperimentConfig& config, const MarketModel& model,
               std::vector<std::string>& warnings) {
    const Claim claim = parse_claim(config.claim);
    const PathBundle bundle = make_bundle(model, config);
    json rows = json::array();
    const PriceEstimate rw = real_world_price(model, claim, bundle);
    warn_kurtosis(rw, "real-world price", warnings);
    rows.push_back(price_row(model.name, claim.label, rw, config.seed));
    if (model.n_assets == model.n_drivers) {
        rows.push_back(price_row(model.name, claim.label, upper_hedging_price(model, claim, bundle),
                                 config.seed));
    }
    if (claim.label == "zcb") {
        rows.push_back(price_row(model.name, claim.label,
                                 zero_coupon_bond(model, bundle, bundle.grid.horizon()), config.seed));
    }
    json comparison = nullptr;
    if (bundle.n_paths >= kMinMartingaleSamples) {
        const RiskNeutralComparison rn = risk_neutral_comparison(model, claim, bundle);
        if (rn.reweighted) {
            rows.push_back(price_row(model.name, claim.label, *rn.reweighted, config.seed));
        }
        comparison = {{"martingale_gap",
                       {{"verdict", to_string(rn.gap.verdict)},
                        {"mean", rn.gap.mean},
                        {"stderr", rn.gap.std_error}}},
                      {"discrepancy", rn.discrepancy},
                      {"discrepancy_stderr", rn.discrepancy_std_error},
                      {"note", rn.note}};
    }
    CsvWriter csv(config.out_dir / "price.csv");
    csv.row("model", "claim", "method", "value", "stderr", "n_paths", "seed");
    for (const auto& r : rows) {
        csv.row(r["model"].get<std::string>(), r["claim"].get<std::string>(),
                r["method"].get<std::string>(), r["value"].get<double>(), r["stderr"].get<double>(),
                r["n_paths"].get<std::size_t>(), r["seed"].get<std::uint64_t>());
    }
    return {{"rows", rows}, {"risk_neutral_comparison", comparison}, {"kurtosis", rw.kurtosis}};
}

json run_hedge(const ExperimentConfig& config, const MarketModel& model) {
    const Claim claim = parse_claim(config.claim);
    const PathBundle bundle = make_bundle(model, config);
    SurfaceOptions options;
    options.basis = config.regression_basis == "polynomial" ? RegressionBasis::polynomial : RegressionBasis::spline;
    options.degree = config.regression_degree;
    const HedgeResult hedge = replicate(model, claim, bundle, options);
    CsvWriter csv(config.out_dir / "hedge.csv");
    csv.row("time", "mean_delta", "rms_error_running");
    for (std::size_t k = 0; k < bundle.grid.n_nodes(); ++k) {
        if (k < hedge.mean_delta.size()) {
            csv.row(bundle.grid.time(k), hedge.mean_delta[k], hedge.rms_error_running[k]);
        } else {
            csv.row(bundle.grid.time(k), "", hedge.rms_error_running[k]);
        }
    }
    json fairness = "not_run";
    if (hedge.fairness) {
        fairness = hedge.fairness->pass ? "pass" : "fail";
    }
    const json summary = {{"v_H", hedge.initial_capital},
                          {"rms_T", hedge.terminal_error_rms},
                          {"max_T", hedge.terminal_error_max},
                          {"fairness", fairness},
                          {"regression_basis", config.regression_basis},
                          {"control_passes", hedge.surface.control_passes_used}};
    write_json(config.out_dir / "hedge_summary.json", summary);
    return summary;
}

json run_utility(const ExperimentConfig& config, const MarketModel& model,
                 std::vector<std::string>& warnings) {
    const UtilitySpec u = parse_utility(config.utility);
    const Claim claim = parse_claim(config.claim);
    const PathBundle bundle = make_bundle(model, config);
    const IndifferenceResult res = indifference_price(u, config.v, claim, bundle);
    if (!res.dual.hypothesis_verified) {
        warnings.push_back("finiteness of the dual value is not verifiable at this sample size");
    }
    const PriceEstimate rw = real_world_price(model, claim, bundle);
    CsvWriter csv(config.out_dir / "utility.csv");
    csv.row("utility", "v", "claim", "y_star", "p_H", "stderr");
    csv.row(u.label, config.v, claim.label, res.y_star, res.price.value, res.price.std_error);
    return {{"y_star", res.y_star},
            {"p_H", res.price.value},
            {"stderr", res.price.std_error},
            {"real_world_price", rw.value},
            {"real_world_stderr", rw.std_error},
            {"dual_kurtosis", res.dual.kurtosis},
            {"hypothesis", res.dual.hypothesis_verified ? "verified" : "not verifiable at this sample size"}};
}

json load_manifest(const std::string& where) {
    fs::path path(where);
    if (fs::is_directory(path)) {
        path /= "manifest.json";
    }
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read manifest " + path.string());
    }
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("command") || !doc.contains("config") ||
        !doc.contains("outputs")) {
        throw ConfigError("malformed manifest " + path.string());
    }
    return doc;
}

bool param_is(const json& params, const char* key, double value) {
    return params.contains(key) && params[key].is_number() &&
           std::abs(params[key].get<double>() - value) <= 1e-12;
}

// Returns "expected_strict", "ok", "out_of_tolerance" or "" for rows no criterion covers.
std::string acceptance_flag(const json& model, const json& row) {
    const std::string name = model.value("name", "");
    const json params = model.value("params", json::object());
    const std::string claim = row["claim"];
    const double value = row["value"];
    const double se = row["stderr"];
    if (name == "bessel3" && claim == "zcb" && param_is(params, "s", 1.0) && param_is(params, "T", 1.0)) {
        const bool close = std::abs(value - kBesselBond) <= kBesselBondTolerance;
        const bool strict = value + 5.0 * se < 1.0;
        return close && strict ? "expected_strict" : "out_of_tolerance";
    }
    if (name == "black_scholes" && claim == "call:100" && param_is(params, "s", 100.0) &&
        param_is(params, "sigma", 0.2) && param_is(params, "r", 0.0) && param_is(params, "T", 1.0)) {
        return std::abs(value - kReferenceCall) <= 3.0 * se ? "ok" : "out_of_tolerance";
    }
    return "";
}

json run_report(const ExperimentConfig& config) {
    if (config.manifests.empty()) {
        throw ConfigError("report needs at least one manifest");
    }
    std::vector<json> manifests;
    for (const auto& m : config.manifests) {
        manifests.push_back(load_manifest(m));
    }
    CsvWriter csv(config.out_dir / "summary.csv");
    csv.row("model", "claim", "method", "value", "stderr", "flag");
    json rows = json::array();
    for (const auto& m : manifests) {
        if (m["command"] != "price") {
            continue;
        }
        const json& out = m["outputs"];
        if (!out.contains("rows") || !out["rows"].is_array() || !m["config"].contains("model")) {
            throw ConfigError("malformed price manifest");
        }
        const json model = m.value("model", m["config"]["model"]);
        for (const auto& r : out["rows"]) {
            if (r["method"] != "real_world") {
                continue;
            }
            const std::string flag = acceptance_flag(model, r);
            csv.row(r["model"].get<std::string>(), r["claim"].get<std::string>(),
                    r["method"].get<std::string>(), r["value"].get<double>(), r["stderr"].get<double>(),
                    flag);
            json row = {{"model", r["model"]}, {"claim", r["claim"]},   {"method", r["method"]},
                        {"value", r["value"]}, {"stderr", r["stderr"]}, {"flag", flag}};
            rows.push_back(row);
        }
    }
    return {{"rows", rows}, {"n_manifests", manifests.size()}};
}

}  // namespace

bool known_command(const std::string& command) {
    return std::find(kCommands.begin(), kCommands.end(), command) != kCommands.end();
}

ExperimentConfig config_from_json(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    static const std::vector<std::string> keys{
        "command",        "model",    "seed",    "n_paths",           "n_steps",    "refinement_levels",
        "regression_degree", "regression_basis", "claim", "strategies", "utility",         "v",          "use_exact_sampler",
        "dump_paths",     "manifests", "out_dir"};
    for (const auto& [key, _] : doc.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    ExperimentConfig c;
    try {
        if (doc.contains("command")) c.command = doc["command"].get<std::string>();
        if (doc.contains("model")) c.model = doc["model"];
        read_size(doc, "seed", c.seed);
        read_size(doc, "n_paths", c.n_paths);
        read_size(doc, "n_steps", c.n_steps);
        read_size(doc, "refinement_levels", c.refinement_levels);
        read_size(doc, "regression_degree", c.regression_degree);
        if (doc.contains("regression_basis")) c.regression_basis = doc["regression_basis"].get<std::string>();
        if (doc.contains("claim")) c.claim = doc["claim"].get<std::string>();
        if (doc.contains("strategies")) c.strategies = doc["strategies"].get<std::vector<std::string>>();
        if (doc.contains("utility")) c.utility = doc["utility"].get<std::string>();
        if (doc.contains("v")) c.v = doc["v"].get<double>();
        if (doc.contains("use_exact_sampler")) c.use_exact_sampler = doc["use_exact_sampler"].get<bool>();
        if (doc.contains("dump_paths")) c.dump_paths = doc["dump_paths"].get<bool>();
        if (doc.contains("manifests")) c.manifests = doc["manifests"].get<std::vector<std::string>>();
        if (doc.contains("out_dir")) c.out_dir = doc["out_dir"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return c;
}

json to_json(const ExperimentConfig& c) {
    return {{"command", c.command},
            {"model", c.model},
            {"seed", c.seed},
            {"n_paths", c.n_paths},
            {"n_steps", c.n_steps},
            {"refinement_levels", c.refinement_levels},
            {"regression_degree", c.regression_degree},
            {"regression_basis", c.regression_basis},
            {"claim", c.claim},
            {"strategies", c.strategies},
            {"utility", c.utility},
            {"v", c.v},
            {"use_exact_sampler", c.use_exact_sampler},
            {"dump_paths", c.dump_paths},
            {"manifests", c.manifests},
            {"out_dir", c.out_dir.string()}};
}

void validate_config(const ExperimentConfig& c) {
    if (!known_command(c.command)) {
        throw ConfigError("unknown command '" + c.command + "'");
    }
    if (c.command == "report") {
        if (c.manifests.empty()) {
            throw ConfigError("report needs at least one manifest");
        }
        return;
    }
    if (c.n_paths == 0 || c.n_steps == 0 || c.refinement_levels == 0 || c.regression_degree == 0) {
        throw ConfigError("paths, steps, refinement levels and regression degree must be positive");
    }
    if (c.regression_basis != "spline" && c.regression_basis != "polynomial") {
        throw ConfigError("regression basis must be spline or polynomial");
    }
    if (c.seed == 0) {
        throw ConfigError("seed must be positive");
    }
    if (!(c.v > 0.0) || !std::isfinite(c.v)) {
        throw ConfigError("initial capital v must be positive");
    }
}

RunResult run(const ExperimentConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    validate_config(config);
    RunResult result;
    json outputs;
    json model_doc = nullptr;

    std::optional<MarketModel> model;
    if (config.command != "report") {
        model = model_from_json(config.model);
        model_doc = model_to_json(*model);
        // surface claim and utility mistakes before any output is written
        parse_claim(config.claim);
        if (config.command == "utility") {
            parse_utility(config.utility);
        }
        if (config.command == "simulate") {
            for (const auto& s : config.strategies) {
                parse_strategy(s, *model);
            }
        }
    }

    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec || !fs::is_directory(config.out_dir)) {
        throw ConfigError("cannot create output directory " + config.out_dir.string());
    }

    if (config.command == "diagnose") {
        outputs = run_diagnose(config, *model);
    } else if (config.command == "simulate") {
        outputs = run_simulate(config, *model);
    } else if (config.command == "price") {
        outputs = run_price(config, *model, result.warnings);
    } else if (config.command == "hedge") {
        outputs = run_hedge(config, *model);
    } else if (config.command == "utility") {
        outputs = run_utility(config, *model, result.warnings);
    } else {
        outputs = run_report(config);
    }

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.manifest = {{"artifact", "benchmark-pricer"},
                       {"version", kArtifactVersion},
                       {"command", config.command},
                       {"seed", config.seed},
                       {"config", to_json(config)},
                       {"model", model_doc},
                       {"outputs", outputs},
                       {"warnings", result.warnings},
                       {"wall_clock_seconds", elapsed}};
    write_json(config.out_dir / "manifest.json", result.manifest);
    return result;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) {
        return 2;
    }
    if (dynamic_cast<const ModelError*>(&e) != nullptr) {
        return 3;
    }
    if (dynamic_cast<const json::exception*>(&e) != nullptr) {
        return 2;
    }
    return 4;
}

}  // namespace bp

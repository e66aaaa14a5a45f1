#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bp/cli_runner.hpp"
#include "bp/errors.hpp"
#include "bp/market_models.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Real-world pricing, hedging and diagnostics for diffusion markets"};
    std::string command;
    std::string config_path;
    std::string model;
    std::string claim;
    std::string utility;
    std::string basis;
    std::vector<std::string> strategies;
    std::vector<std::string> manifests;
    std::uint64_t seed = 0;
    long long paths = -1;
    long long steps = -1;
    long long levels = -1;
    long long degree = -1;
    double v = 0.0;
    std::string out_dir;
    bool dump_paths = false;
    bool no_exact = false;

    app.add_option("command", command, "diagnose | simulate | price | hedge | utility | report")->required();
    app.add_option("--config", config_path, "JSON experiment config");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--paths", paths, "number of Monte Carlo paths");
    app.add_option("--steps", steps, "number of time steps");
    app.add_option("--levels", levels, "refinement levels for diagnose");
    app.add_option("--degree", degree, "polynomial degree for hedge");
    app.add_option("--basis", basis, "hedge regression basis: spline or polynomial");
    app.add_option("--model", model, "built-in model name (default parameters)");
    app.add_option("--claim", claim, "claim spec, e.g. call:100, put:90, zcb, benchmark, poly:0,1");
    app.add_option("--strategies", strategies, "strategies for simulate: gop, savings or weights");
    app.add_option("--utility", utility, "log or power:a");
    app.add_option("--v", v, "initial capital for utility");
    app.add_option("--manifests", manifests, "manifest files or run directories for report");
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--dump-paths", dump_paths, "write paths.csv from simulate");
    app.add_flag("--no-exact", no_exact, "use the Euler scheme even when an exact sampler exists");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        nlohmann::json doc = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                throw bp::ConfigError("cannot read config " + config_path);
            }
            doc = nlohmann::json::parse(in, nullptr, false);
            if (doc.is_discarded()) {
                throw bp::ConfigError("config " + config_path + " is not valid JSON");
            }
        }
        bp::ExperimentConfig config = bp::config_from_json(doc);
        config.command = command;
        auto count = [](long long x, const char* what) {
            if (x < 0) {
                throw bp::ConfigError(std::string(what) + " must be positive");
            }
            return static_cast<std::size_t>(x);
        };
        if (app.count("--seed")) config.seed = seed;
        if (app.count("--paths")) config.n_paths = count(paths, "--paths");
        if (app.count("--steps")) config.n_steps = count(steps, "--steps");
        if (app.count("--levels")) config.refinement_levels = count(levels, "--levels");
        if (app.count("--degree")) config.regression_degree = count(degree, "--degree");
        if (app.count("--basis")) config.regression_basis = basis;
        if (app.count("--model")) config.model = model;
        if (app.count("--claim")) config.claim = claim;
        if (app.count("--strategies")) config.strategies = strategies;
        if (app.count("--utility")) config.utility = utility;
        if (app.count("--v")) config.v = v;
        if (app.count("--manifests")) config.manifests = manifests;
        if (app.count("--out")) config.out_dir = out_dir;
        if (dump_paths) config.dump_paths = true;
        if (no_exact) config.use_exact_sampler = false;

        const bp::RunResult result = bp::run(config);
        for (const auto& w : result.warnings) {
            std::cerr << "warning: " << w << '\n';
        }
        std::cout << result.manifest["outputs"].dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return bp::exit_code_for(e);
    }
}

#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace bp {

inline constexpr const char* kArtifactVersion = "1.0.0";

struct ExperimentConfig {
    std::string command;  // diagnose, simulate, price, hedge, utility, report
    nlohmann::json model = "black_scholes";
    std::uint64_t seed = 1;
    std::size_t n_paths = 10000;
    std::size_t n_steps = 256;
    std::size_t refinement_levels = 5;
    std::size_t regression_degree = 4;  // polynomial basis only
    std::string regression_basis = "spline";  // spline | polynomial
    std::string claim = "call:100";
    std::vector<std::string> strategies{"gop", "savings"};
    std::string utility = "log";
    double v = 1.0;
    bool use_exact_sampler = true;
    bool dump_paths = false;
    std::vector<std::string> manifests;  // report only
    std::filesystem::path out_dir = "out";
};

bool known_command(const std::string& command);

// Unknown keys are rejected. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& config);
void validate_config(const ExperimentConfig& config);

struct RunResult {
    nlohmann::json manifest;
    std::vector<std::string> warnings;
};

// Validates, runs the command and writes DIR/manifest.json plus the command's CSVs.
RunResult run(const ExperimentConfig& config);

// 2 for configuration errors, 3 for model-assumption violations, 4 for numerical failures.
int exit_code_for(const std::exception& e);

}  // namespace bp

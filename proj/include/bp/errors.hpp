#pragma once

#include <stdexcept>
#include <string>

namespace bp {

// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A model violates a standing assumption: rank, positivity, complete market (exit code 3).
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, degenerate regressions, failed brackets (exit code 4).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bp

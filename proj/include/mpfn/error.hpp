#pragma once

#include <stdexcept>
#include <string>

namespace mpfn {

// Error taxonomy. The CLI maps each class to a distinct exit code
// (see tools/cli.cpp); library code throws, it never exits.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes disagree with an op's contract.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input data (corpus records, annotation files, ...).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// The caller violated an API contract (non-scalar loss, empty batch, ...).
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// A forward op produced NaN/Inf, or numeric verification failed.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Inconsistent model/fusion configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File could not be opened / read / written.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace mpfn

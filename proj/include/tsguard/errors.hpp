#pragma once

#include <stdexcept>
#include <string>

namespace tsguard {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or malformed input files (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// A required artifact (dataset, trained component) is missing (CLI exit code 3).
struct PrerequisiteError : Error {
    using Error::Error;
};

/// Non-finite values or other numerical failures (CLI exit code 4).
struct NumericError : Error {
    using Error::Error;
};

/// Tensor shape mismatch; a programming/contract violation rather than a runtime condition.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

} // namespace tsguard

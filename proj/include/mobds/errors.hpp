#pragma once
#include <stdexcept>
#include <string>

namespace mobds {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (CSV schema, invalid times, ...).
struct DataError : Error {
    using Error::Error;
};

// Invalid configuration (bad trimming window, alpha outside (0,1), ...).
struct ConfigError : Error {
    using Error::Error;
};

// Numerical failure (non-convergence, rank deficiency, singular covariance).
struct NumericError : Error {
    using Error::Error;
};

// Diverging coefficients, typically complete separation in a sparse node.
struct SeparationError : NumericError {
    using NumericError::NumericError;
};

// Covariance estimate too degenerate to standardize the score process.
struct SingularCovarianceError : NumericError {
    using NumericError::NumericError;
};

}  // namespace mobds

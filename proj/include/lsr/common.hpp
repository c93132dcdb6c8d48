#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lsr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Invalid configuration (bad parameter ranges, malformed config files).
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or insufficient data (bad input files, degenerate datasets).
/// The CLI maps this to exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure (non-finite loss, non-convergence, singular systems).
/// The CLI maps this to exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace lsr

#pragma once

#include <stdexcept>
#include <string>

namespace atrpp {

// Malformed or inconsistent input data (bad files, out-of-range dims, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite losses, likelihoods, or unstable parameters.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace atrpp

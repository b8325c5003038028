#pragma once

#include <stdexcept>
#include <string>

namespace cogcalib {

// Bad argument values (out-of-range hyperparameters, empty inputs, ...)
struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched dimensions between parameters and data
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exhausted budgets (e.g. candidate draws before a pool fills)
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or unknown configuration keys/values
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cogcalib

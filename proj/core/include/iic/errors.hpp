#pragma once

#include <stdexcept>
#include <string>

namespace iic {

// Malformed or unreadable input data (files, manifests, out-of-range indices).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: degenerate norms, non-finite losses, diverged state.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace iic

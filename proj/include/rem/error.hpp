#pragma once

#include <stdexcept>
#include <string>

namespace rem {

// Bad input: malformed files, inconsistent dimensions, invalid configs.
// The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or degenerate numerics (zero variance, diverging ODE
// state, NaN loss). The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rem

#pragma once

#include <stdexcept>
#include <string>

namespace adjfit {

/// Invalid arguments: dimension mismatch, unknown names, malformed measures.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The step controller exhausted its step budget or the step size underflowed.
class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite state was produced while integrating.
class DivergenceError : public IntegrationError {
 public:
  using IntegrationError::IntegrationError;
};

/// Dense output queried outside the integrated span.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Quadrature failed to reach its tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adjfit

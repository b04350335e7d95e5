#pragma once

#include <stdexcept>
#include <string>

namespace sddpc {

// Invalid counts, out-of-range settings, malformed configuration.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operand shapes that do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical routine could not deliver a result within its tolerance
// (rank deficiency, non-convergence, PSD clamping beyond tolerance, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sddpc

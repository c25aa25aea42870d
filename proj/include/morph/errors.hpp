#pragma once

#include <stdexcept>
#include <string>

namespace morph {

/// Base of every error thrown by the library. The CLI maps `InputError` and
/// `StructuralError` to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range user input (files, parameters, lengths).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Shapes or skeletons that do not fit together.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Non-finite simulator state after integration.
class SimulationDiverged : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradients or losses during optimization.
class OptimizationError : public Error {
 public:
  using Error::Error;
};

} // namespace morph

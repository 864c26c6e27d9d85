#pragma once

#include <stdexcept>
#include <string>

namespace microsynth {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, inconsistent configuration, mismatched shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-positive or overflowing grid dimensions.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Malformed, truncated, or foreign field/manifest files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Degenerate spectra or singular precision matrices.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure diverged or could not make progress.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a numerical trajectory.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace microsynth

#pragma once

#include <stdexcept>
#include <string>

namespace kdscore {

// Base for every recoverable error raised by this library.  Callers that
// want a single catch site can catch Error; the CLI distinguishes input
// problems (InputError) from data-driven degeneracies (DegeneracyError)
// to pick its exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed arguments, files, or datasets: the caller supplied something
// that can never work.
struct InputError : Error {
  using Error::Error;
};

// The inputs were well formed but the data landed on a configuration the
// estimator cannot handle (zero variance, no overlap, ...).
struct DegeneracyError : Error {
  using Error::Error;
};

struct InvalidArgument : InputError {
  using InputError::InputError;
};

struct DimensionMismatch : InputError {
  using InputError::InputError;
};

struct InvalidK : InputError {
  using InputError::InputError;
};

struct InvalidWeights : InputError {
  using InputError::InputError;
};

struct DomainError : InputError {
  using InputError::InputError;
};

struct DegenerateFolds : InputError {
  using InputError::InputError;
};

// File-format problems; messages carry the source name and line number.
struct ParseError : InputError {
  using InputError::InputError;
};

struct AllZeroWeights : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

struct DegenerateVariance : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

struct NearSingularInformation : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

struct OverlapViolation : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

struct InsufficientData : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

struct HalfTooSmall : DegeneracyError {
  using DegeneracyError::DegeneracyError;
};

}  // namespace kdscore

#pragma once

#include <stdexcept>
#include <string>

namespace gibbspath {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter set falls outside every admissibility class. The message
/// names the violated inequality.
class RejectedParameters : public Error {
 public:
  using Error::Error;
};

/// A quantity that must be finite came out as inf/nan (unregularized
/// singular potentials, overflow).
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

/// Iterative method failed to reach the requested tolerance.
class NotConverged : public Error {
 public:
  using Error::Error;
};

/// Importance weights or MCMC output too degenerate to trust.
class DegenerateSample : public Error {
 public:
  using Error::Error;
};

/// Shape/grid mismatch between arguments.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace gibbspath

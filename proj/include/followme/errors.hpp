#pragma once

#include <stdexcept>
#include <string>

namespace followme {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An argument violates an operation precondition (dimension mismatch,
// non-finite value, out-of-range parameter).
struct InvalidInputError : Error {
  using Error::Error;
};

// Too few samples to fit a calibration profile.
struct CalibrationError : Error {
  using Error::Error;
};

// Training data cannot produce a classifier (e.g. only one class present).
struct TrainingError : Error {
  using Error::Error;
};

// An iterative solver ran out of its iteration budget.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, double violation)
      : Error(what), kkt_violation(violation) {}

  double kkt_violation = 0.0;
};

// Malformed input file or schema violation. `field_path` names the offending
// field, e.g. "persons[2].waypoints[0].t".
struct ParseError : Error {
  ParseError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), field_path(path) {}

  std::string field_path;
};

}  // namespace followme

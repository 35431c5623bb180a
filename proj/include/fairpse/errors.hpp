#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fairpse {

/// Malformed inputs: bad graphs, specs, files, role maps.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// The requested path-specific effect is not a function of the observed data.
/// Estimation and constrained fitting refuse to proceed on these.
class NotIdentifiedError : public std::runtime_error {
 public:
  NotIdentifiedError(const std::string& what, std::vector<std::string> witness)
      : std::runtime_error(what), witness(std::move(witness)) {}
  std::vector<std::string> witness;
};

/// A probability in an estimator denominator fell below the positivity floor.
class PositivityError : public std::runtime_error {
 public:
  explicit PositivityError(const std::string& what) : std::runtime_error(what) {}
};

/// An iterative fit ran out of iterations or diverged.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fairpse

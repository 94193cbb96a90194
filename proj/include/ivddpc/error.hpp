#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ivddpc {

/// Operand shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The feedback interconnection has a singular algebraic loop.
class WellPosednessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative method ran out of iterations. Carries the last residual.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// A data matrix lost rank beyond the configured pseudo-inverse tolerance.
class IllPosedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A quadratic program could not be solved.
class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration failed validation.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::vector<std::string> keys = {})
      : std::runtime_error(what), keys_(std::move(keys)) {}
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

}  // namespace ivddpc

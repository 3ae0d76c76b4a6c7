#pragma once

#include <stdexcept>
#include <string>

namespace drlqr {

// Base error. `category()` is a stable machine-readable tag used by the CLI to
// pick exit codes; `what()` is the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

// Incompatible matrix shapes.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

// Invalid parameter values (non-positive mass, gamma out of range, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain", message) {}
};

// A quantity that requires closed-loop stability was requested for an
// unstable configuration. Conceptually the cost is +infinity; we signal a
// typed error instead of returning a sentinel value.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& message, double spectral_radius, int system_index = -1)
      : Error("instability", message),
        spectral_radius_(spectral_radius),
        system_index_(system_index) {}

  double spectral_radius() const noexcept { return spectral_radius_; }
  // Index of the offending system in a sample set, or -1 for single-system calls.
  int system_index() const noexcept { return system_index_; }

 private:
  double spectral_radius_;
  int system_index_;
};

// An iterative solver exhausted its budget; carries the last residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double residual)
      : Error("convergence", message), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Malformed experiment configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

// Filesystem / serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace drlqr

#pragma once

#include <stdexcept>
#include <string>

namespace edtrack {

enum class ErrorCategory {
  Config,
  InvalidParameter,
  Io,
  Numeric,
  Simulation,
  Solver,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "configuration";
    case ErrorCategory::InvalidParameter: return "invalid-parameter";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::Simulation: return "simulation";
    case ErrorCategory::Solver: return "solver";
  }
  return "unknown";
}

/// Base exception; the category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::Config, w) {}
};

struct InvalidParameterError : Error {
  explicit InvalidParameterError(const std::string& w)
      : Error(ErrorCategory::InvalidParameter, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::Io, w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::Numeric, w) {}
};

struct SimulationError : Error {
  explicit SimulationError(const std::string& w) : Error(ErrorCategory::Simulation, w) {}
};

}  // namespace edtrack

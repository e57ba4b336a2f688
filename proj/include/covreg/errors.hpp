#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace covreg {

/// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
  input,   // bad files, malformed data, dimension mismatches (exit 2)
  config,  // invalid parameter combinations (exit 2)
  solver,  // numerical failure: divergence, overflow, singularity (exit 3)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(ErrorKind::input, msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg)
      : Error(ErrorKind::config, msg) {}
};

/// Carries the last iterate and its KKT residual so callers can diagnose
/// (or salvage) a non-convergent solve.
class SolverError : public Error {
 public:
  explicit SolverError(const std::string& msg,
                       std::vector<double> last_iterate = {},
                       double kkt_residual = 0.0)
      : Error(ErrorKind::solver, msg),
        last_iterate_(std::move(last_iterate)),
        kkt_residual_(kkt_residual) {}

  const std::vector<double>& last_iterate() const { return last_iterate_; }
  double kkt_residual() const { return kkt_residual_; }

 private:
  std::vector<double> last_iterate_;
  double kkt_residual_;
};

}  // namespace covreg

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace facial_basis {

/// Process exit codes shared by the CLI and the error hierarchy.
enum class ExitCode : int {
  kSuccess = 0,
  kInputError = 1,
  kNumericalError = 2,
  kPartialFailure = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kInputError; }
};

/// Dimension mismatches, non-finite inputs, malformed arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

/// Raised when a corpus carries no signal at all (e.g. every sample is zero).
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

/// A training fold lost one of the two classes.
class StratificationError : public InputError {
 public:
  using InputError::InputError;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::size_t iterations, double last_update)
      : Error(what + " (iterations=" + std::to_string(iterations) +
              ", last update=" + std::to_string(last_update) + ")"),
        summary_(what),
        iterations_(iterations),
        last_update_(last_update) {}
  ExitCode exit_code() const noexcept override { return ExitCode::kNumericalError; }
  std::size_t iterations() const noexcept { return iterations_; }
  double last_update() const noexcept { return last_update_; }
  const std::string& summary() const noexcept { return summary_; }

 private:
  std::string summary_;
  std::size_t iterations_;
  double last_update_;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  ExitCode exit_code() const noexcept override { return ExitCode::kNumericalError; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace facial_basis

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qempo {

enum class ErrorKind {
  invalid_argument,
  support_mismatch,
  convergence_failure,
  resource_limit,
  evaluation_failure,
  training_failure,
  parse_error,
};

const char* to_string(ErrorKind kind);

// Base of every error raised by the library. The kind is the stable contract;
// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error(ErrorKind::invalid_argument, message) {}
};

class SupportMismatch : public Error {
 public:
  explicit SupportMismatch(const std::string& message)
      : Error(ErrorKind::support_mismatch, message) {}
};

class ResourceLimit : public Error {
 public:
  explicit ResourceLimit(const std::string& message)
      : Error(ErrorKind::resource_limit, message) {}
};

class EvaluationFailure : public Error {
 public:
  explicit EvaluationFailure(const std::string& message)
      : Error(ErrorKind::evaluation_failure, message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message)
      : Error(ErrorKind::parse_error, message) {}
};

// Raised when a training loop produces a non-finite loss.
class TrainingFailure : public Error {
 public:
  TrainingFailure(std::size_t step, double last_finite_loss, const std::string& message);
  std::size_t step() const noexcept { return step_; }
  double last_finite_loss() const noexcept { return last_finite_loss_; }

 private:
  std::size_t step_;
  double last_finite_loss_;
};

}  // namespace qempo

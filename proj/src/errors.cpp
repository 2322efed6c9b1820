#include "qempo/errors.hpp"

namespace qempo {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::support_mismatch: return "support-mismatch";
    case ErrorKind::convergence_failure: return "convergence-failure";
    case ErrorKind::resource_limit: return "resource-limit";
    case ErrorKind::evaluation_failure: return "evaluation-failure";
    case ErrorKind::training_failure: return "training-failure";
    case ErrorKind::parse_error: return "parse-error";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

TrainingFailure::TrainingFailure(std::size_t step, double last_finite_loss,
                                 const std::string& message)
    : Error(ErrorKind::training_failure, message),
      step_(step),
      last_finite_loss_(last_finite_loss) {}

}  // namespace qempo

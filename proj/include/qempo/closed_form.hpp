#pragma once

// Analytical optimal policies of the three alignment programs:
//   RLHF      pi ∝ pi_ref * exp(r / beta)
//   QEMPO     pi ∝ exp(lambda * r)
//   QEMPO-KL  pi ∝ pi_ref^(l2/(l2+1)) * exp(l1 * r / (l2+1))
// together with the tempered softmax family they are all instances of, and the
// inverse maps from a policy back to the reward it implies.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qempo/instance.hpp"

namespace qempo {

enum class Method { rlhf, qempo, qempo_kl };

const char* to_string(Method method);
Method method_from_string(const std::string& name);

// Multipliers for one method. Only the fields relevant to `method` are read.
struct MethodParams {
  Method method = Method::rlhf;
  double beta = 0.0;
  double lambda = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  static MethodParams rlhf(double beta) { return {Method::rlhf, beta, 0.0, 0.0, 0.0}; }
  static MethodParams qempo(double lambda) { return {Method::qempo, 0.0, lambda, 0.0, 0.0}; }
  static MethodParams qempo_kl(double lambda1, double lambda2) {
    return {Method::qempo_kl, 0.0, 0.0, lambda1, lambda2};
  }
  // The (1/l1, l2/l1) parameterization used by the training losses.
  static MethodParams qempo_kl_inverse(double inv_lambda1, double ratio21) {
    const double l1 = 1.0 / inv_lambda1;
    return qempo_kl(l1, ratio21 * l1);
  }
};

// Throws InvalidArgument when a multiplier the method reads is not > 0.
void validate_params(const MethodParams& params);

struct ClosedFormResult {
  PolicyDistribution dist;
  double log_partition = 0.0;  // ln Z(x) of the unnormalized form
  double entropy = 0.0;
  double expected_reward = 0.0;
  double kl_to_ref = 0.0;  // +inf when the policy leaves the support of pi_ref
  // Candidates dropped from the support because pi_ref is zero there.
  std::vector<std::size_t> excluded;
};

ClosedFormResult rlhf_optimal(const AlignmentInstance& inst, double beta);
ClosedFormResult qempo_optimal(const AlignmentInstance& inst, double lambda);
ClosedFormResult qempo_kl_optimal(const AlignmentInstance& inst, double lambda1, double lambda2);
ClosedFormResult closed_form_policy(const AlignmentInstance& inst, const MethodParams& params);

// Builds the result record for an arbitrary distribution over `inst`.
ClosedFormResult describe_policy(const AlignmentInstance& inst, std::vector<double> probs,
                                 double log_partition = 0.0,
                                 std::vector<std::size_t> excluded = {});

// softmax(s * z), computed in log space. Requires s > 0.
std::vector<double> tempered_softmax(std::span<const double> z, double s);

// dH/ds of the tempered softmax: -s * Var_{p(s)}[z].
double tempered_entropy_derivative(std::span<const double> z, double s);

// Reward implied by a policy under a method's closed form, with the ln Z(x)
// constant dropped. Only meaningful after mean-centering.
std::vector<double> implied_reward(std::span<const double> dist, const AlignmentInstance& inst,
                                   const MethodParams& params);

std::vector<double> mean_centered(std::span<const double> values);

}  // namespace qempo

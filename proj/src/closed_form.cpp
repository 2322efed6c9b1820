#include "qempo/closed_form.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "qempo/errors.hpp"

namespace qempo {

const char* to_string(Method method) {
  switch (method) {
    case Method::rlhf: return "rlhf";
    case Method::qempo: return "qempo";
    case Method::qempo_kl: return "qempo-kl";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "rlhf") return Method::rlhf;
  if (name == "qempo") return Method::qempo;
  if (name == "qempo-kl" || name == "qempo_kl") return Method::qempo_kl;
  throw InvalidArgument("unknown method '" + name + "'");
}

void validate_params(const MethodParams& params) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument(std::string(name) + " must be a finite positive number");
    }
  };
  switch (params.method) {
    case Method::rlhf: positive(params.beta, "beta"); break;
    case Method::qempo: positive(params.lambda, "lambda"); break;
    case Method::qempo_kl:
      positive(params.lambda1, "lambda1");
      positive(params.lambda2, "lambda2");
      break;
  }
}

namespace {

// Normalizes exp(scores) over the candidates in `support`; others get 0.
ClosedFormResult from_scores(const AlignmentInstance& inst, const std::vector<double>& scores,
                             const std::vector<bool>& support) {
  std::vector<double> active;
  std::vector<std::size_t> excluded;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (support[i]) {
      active.push_back(scores[i]);
    } else {
      excluded.push_back(i);
    }
  }
  if (active.empty()) throw InvalidArgument("instance '" + inst.id() + "' has empty support");
  const double log_z = log_sum_exp(active);
  std::vector<double> probs(scores.size(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (support[i]) probs[i] = std::exp(scores[i] - log_z);
  }
  return describe_policy(inst, std::move(probs), log_z, std::move(excluded));
}

std::vector<bool> reference_support(const AlignmentInstance& inst) {
  std::vector<bool> support(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) support[i] = inst.ref_probs()[i] > 0.0;
  return support;
}

}  // namespace

ClosedFormResult describe_policy(const AlignmentInstance& inst, std::vector<double> probs,
                                 double log_partition, std::vector<std::size_t> excluded) {
  ClosedFormResult out;
  out.dist = PolicyDistribution(std::move(probs), inst.id());
  out.log_partition = log_partition;
  out.entropy = entropy(out.dist.probs());
  out.expected_reward = expected_reward(out.dist.probs(), inst);
  try {
    out.kl_to_ref = kl_divergence(out.dist.probs(), inst.ref_probs());
  } catch (const SupportMismatch&) {
    out.kl_to_ref = std::numeric_limits<double>::infinity();
  }
  out.excluded = std::move(excluded);
  return out;
}

ClosedFormResult rlhf_optimal(const AlignmentInstance& inst, double beta) {
  validate_params(MethodParams::rlhf(beta));
  const auto support = reference_support(inst);
  std::vector<double> scores(inst.size(), 0.0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (support[i]) scores[i] = std::log(inst.ref_probs()[i]) + inst.rewards()[i] / beta;
  }
  return from_scores(inst, scores, support);
}

ClosedFormResult qempo_optimal(const AlignmentInstance& inst, double lambda) {
  validate_params(MethodParams::qempo(lambda));
  std::vector<double> scores(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) scores[i] = lambda * inst.rewards()[i];
  return from_scores(inst, scores, std::vector<bool>(inst.size(), true));
}

ClosedFormResult qempo_kl_optimal(const AlignmentInstance& inst, double lambda1, double lambda2) {
  validate_params(MethodParams::qempo_kl(lambda1, lambda2));
  const auto support = reference_support(inst);
  const double ref_power = lambda2 / (lambda2 + 1.0);
  const double reward_scale = lambda1 / (lambda2 + 1.0);
  std::vector<double> scores(inst.size(), 0.0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (support[i]) {
      scores[i] = ref_power * std::log(inst.ref_probs()[i]) + reward_scale * inst.rewards()[i];
    }
  }
  return from_scores(inst, scores, support);
}

ClosedFormResult closed_form_policy(const AlignmentInstance& inst, const MethodParams& params) {
  switch (params.method) {
    case Method::rlhf: return rlhf_optimal(inst, params.beta);
    case Method::qempo: return qempo_optimal(inst, params.lambda);
    case Method::qempo_kl: return qempo_kl_optimal(inst, params.lambda1, params.lambda2);
  }
  throw InvalidArgument("unknown method");
}

std::vector<double> tempered_softmax(std::span<const double> z, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("temperature scale s must be > 0");
  std::vector<double> scaled(z.begin(), z.end());
  for (double& v : scaled) v *= s;
  return softmax_from_logits(scaled);
}

double tempered_entropy_derivative(std::span<const double> z, double s) {
  const std::vector<double> p = tempered_softmax(z, s);
  // Moments of z - z[0]; exactly zero for constant z.
  double mean = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) mean += p[i] * (z[i] - z[0]);
  double var = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - z[0] - mean;
    var += p[i] * d * d;
  }
  return -s * var;
}

std::vector<double> implied_reward(std::span<const double> dist, const AlignmentInstance& inst,
                                   const MethodParams& params) {
  validate_params(params);
  validate_distribution(dist);
  if (dist.size() != inst.size()) throw InvalidArgument("implied_reward: length mismatch");
  const bool needs_ref = params.method != Method::qempo;
  std::vector<double> out(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) {
      throw SupportMismatch("implied_reward: policy probability is zero at candidate " +
                            std::to_string(i));
    }
    if (needs_ref && inst.ref_probs()[i] <= 0.0) {
      throw SupportMismatch("implied_reward: reference probability is zero at candidate " +
                            std::to_string(i));
    }
    const double log_p = std::log(dist[i]);
    switch (params.method) {
      case Method::rlhf:
        out[i] = params.beta * (log_p - std::log(inst.ref_probs()[i]));
        break;
      case Method::qempo:
        out[i] = log_p / params.lambda;
        break;
      case Method::qempo_kl:
        out[i] = log_p / params.lambda1 +
                 (params.lambda2 / params.lambda1) * (log_p - std::log(inst.ref_probs()[i]));
        break;
    }
  }
  return out;
}

std::vector<double> mean_centered(std::span<const double> values) {
  if (values.empty()) return {};
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v -= mean;
  return out;
}

}  // namespace qempo

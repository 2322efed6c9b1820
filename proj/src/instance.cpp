#include "qempo/instance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "qempo/errors.hpp"

namespace qempo {

namespace {

// Logit used for candidates the reference policy never emits.
const double kZeroProbLogit = std::log(std::numeric_limits<double>::min());

void require_same_size(std::span<const double> dist, const AlignmentInstance& inst) {
  if (dist.size() != inst.size()) {
    throw InvalidArgument("distribution has " + std::to_string(dist.size()) +
                          " entries, instance '" + inst.id() + "' has " +
                          std::to_string(inst.size()) + " candidates");
  }
}

}  // namespace

AlignmentInstance::AlignmentInstance(std::string id, std::vector<CandidateOutcome> candidates)
    : id_(std::move(id)), candidates_(std::move(candidates)) {
  if (candidates_.size() < 2) {
    throw InvalidArgument("instance '" + id_ + "': needs at least 2 candidates");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < candidates_.size(); ++i) {
    const auto& c = candidates_[i];
    const std::string where = "instance '" + id_ + "' candidates[" + std::to_string(i) + "]";
    if (c.index != i) throw InvalidArgument(where + ".index: expected " + std::to_string(i));
    if (!std::isfinite(c.reward)) throw InvalidArgument(where + ".reward: not finite");
    if (!std::isfinite(c.ref_prob) || c.ref_prob < 0.0) {
      throw InvalidArgument(where + ".ref_prob: must be finite and >= 0");
    }
    total += c.ref_prob;
    rewards_.push_back(c.reward);
    ref_probs_.push_back(c.ref_prob);
    if (c.quality == Quality::positive) ++positive_count_;
  }
  if (std::abs(total - 1.0) > kDistributionTolerance) {
    throw InvalidArgument("instance '" + id_ + "' ref_prob: sums to " + std::to_string(total) +
                          ", expected 1");
  }
}

bool AlignmentInstance::has_binary_quality_rewards() const {
  return std::all_of(candidates_.begin(), candidates_.end(), [](const CandidateOutcome& c) {
    return c.reward == (c.quality == Quality::positive ? 1.0 : 0.0);
  });
}

AlignmentInstance AlignmentInstance::from_vectors(std::string id, std::vector<double> rewards,
                                                  std::vector<double> ref_probs,
                                                  std::vector<bool> positive) {
  if (rewards.size() != ref_probs.size() || rewards.size() != positive.size()) {
    throw InvalidArgument("from_vectors: length mismatch");
  }
  std::vector<CandidateOutcome> candidates;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    candidates.push_back({i, {}, rewards[i], positive[i] ? Quality::positive : Quality::negative,
                          ref_probs[i]});
  }
  return AlignmentInstance(std::move(id), std::move(candidates));
}

void validate_distribution(std::span<const double> probs) {
  if (probs.empty()) throw InvalidArgument("distribution is empty");
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidArgument("distribution entry " + std::to_string(p) + " is not a probability");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kDistributionTolerance) {
    throw InvalidArgument("distribution sums to " + std::to_string(total));
  }
}

PolicyDistribution::PolicyDistribution(std::vector<double> probs, std::string instance_id)
    : instance_id_(std::move(instance_id)), probs_(std::move(probs)) {
  validate_distribution(probs_);
}

ScenarioSuite::ScenarioSuite(std::vector<AlignmentInstance> instances, std::uint64_t seed)
    : instances_(std::move(instances)), seed_(seed) {
  std::set<std::string> ids;
  for (const auto& inst : instances_) {
    if (!ids.insert(inst.id()).second) {
      throw InvalidArgument("duplicate instance id '" + inst.id() + "'");
    }
  }
}

LogitPolicy::LogitPolicy(std::vector<std::string> instance_ids,
                         std::vector<std::vector<double>> logits)
    : instance_ids_(std::move(instance_ids)), logits_(std::move(logits)) {
  if (instance_ids_.size() != logits_.size()) {
    throw InvalidArgument("LogitPolicy: ids and logit vectors differ in count");
  }
  for (const auto& row : logits_) {
    if (row.empty()) throw InvalidArgument("LogitPolicy: empty logit vector");
    for (double v : row) {
      if (!std::isfinite(v)) throw InvalidArgument("LogitPolicy: non-finite logit");
    }
  }
}

LogitPolicy LogitPolicy::from_reference(const ScenarioSuite& suite) {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> logits;
  for (const auto& inst : suite.instances()) {
    ids.push_back(inst.id());
    std::vector<double> row;
    for (double p : inst.ref_probs()) row.push_back(p > 0.0 ? std::log(p) : kZeroProbLogit);
    logits.push_back(std::move(row));
  }
  return LogitPolicy(std::move(ids), std::move(logits));
}

LogitPolicy LogitPolicy::uniform(const ScenarioSuite& suite) {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> logits;
  for (const auto& inst : suite.instances()) {
    ids.push_back(inst.id());
    logits.emplace_back(inst.size(), 0.0);
  }
  return LogitPolicy(std::move(ids), std::move(logits));
}

PolicyDistribution LogitPolicy::distribution(std::size_t instance) const {
  return PolicyDistribution(softmax_from_logits(logits_.at(instance)), instance_ids_.at(instance));
}

std::vector<double> LogitPolicy::log_probs(std::size_t instance) const {
  return log_softmax(logits_.at(instance));
}

void LogitPolicy::add_scaled(const std::vector<std::vector<double>>& delta, double scale) {
  if (delta.size() != logits_.size()) throw InvalidArgument("add_scaled: shape mismatch");
  for (std::size_t i = 0; i < logits_.size(); ++i) {
    if (delta[i].size() != logits_[i].size()) throw InvalidArgument("add_scaled: shape mismatch");
    for (std::size_t j = 0; j < logits_[i].size(); ++j) logits_[i][j] += scale * delta[i][j];
  }
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("log_sum_exp of empty input");
  const double max_v = *std::max_element(values.begin(), values.end());
  if (std::isinf(max_v) && max_v < 0) return max_v;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max_v);
  return max_v + std::log(sum);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax of empty input");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidArgument("softmax input is not finite");
  }
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax_from_logits(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

double entropy(std::span<const double> dist) {
  validate_distribution(dist);
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence: length mismatch");
  validate_distribution(p);
  validate_distribution(q);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw SupportMismatch("kl_divergence: p[" + std::to_string(i) + "] > 0 but q[" +
                            std::to_string(i) + "] = 0");
    }
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

double expected_reward(std::span<const double> dist, const AlignmentInstance& inst) {
  require_same_size(dist, inst);
  double total = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) total += dist[i] * inst.rewards()[i];
  return total;
}

double quality_mass(std::span<const double> dist, const AlignmentInstance& inst) {
  require_same_size(dist, inst);
  double mass = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (inst.is_positive(i)) mass += dist[i];
  }
  return mass;
}

double positive_conditional_entropy(std::span<const double> dist, const AlignmentInstance& inst) {
  const double mass = quality_mass(dist, inst);
  if (mass <= 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (!inst.is_positive(i) || dist[i] <= 0.0) continue;
    const double q = dist[i] / mass;
    h -= q * std::log(q);
  }
  return std::max(h, 0.0);
}

namespace {

struct IdealLevels {
  double positive_log;  // ln((1-eps)/|Y+|)
  double negative_log;  // ln(eps/|Y-|)
};

IdealLevels ideal_levels(const AlignmentInstance& inst, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw InvalidArgument("ideal policy epsilon must lie in (0, 1)");
  }
  if (inst.positive_count() == 0 || inst.negative_count() == 0) {
    throw InvalidArgument("instance '" + inst.id() +
                          "': ideal policy needs both positive and negative candidates");
  }
  const double pos = (1.0 - epsilon) / static_cast<double>(inst.positive_count());
  const double neg = epsilon / static_cast<double>(inst.negative_count());
  if (!(pos > neg)) {
    throw InvalidArgument("ideal policy needs (1-eps)/|Y+| > eps/|Y-|");
  }
  return {std::log(pos), std::log(neg)};
}

}  // namespace

PolicyDistribution ideal_policy(const AlignmentInstance& inst, double epsilon) {
  const IdealLevels levels = ideal_levels(inst, epsilon);
  std::vector<double> probs(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    probs[i] = std::exp(inst.is_positive(i) ? levels.positive_log : levels.negative_log);
  }
  return PolicyDistribution(std::move(probs), inst.id());
}

double quality_term_for_mass(double positive_mass, const AlignmentInstance& inst, double epsilon) {
  const IdealLevels levels = ideal_levels(inst, epsilon);
  return positive_mass * (levels.positive_log - levels.negative_log) + levels.negative_log;
}

KlDecomposition alignment_kl_decomposition(std::span<const double> dist,
                                           const AlignmentInstance& inst, double epsilon) {
  require_same_size(dist, inst);
  const IdealLevels levels = ideal_levels(inst, epsilon);
  const PolicyDistribution ideal = ideal_policy(inst, epsilon);
  KlDecomposition out;
  out.kl = kl_divergence(dist, ideal.probs());
  out.entropy = entropy(dist);
  out.quality_gap = levels.positive_log - levels.negative_log;
  out.quality_term = quality_mass(dist, inst) * out.quality_gap + levels.negative_log;
  return out;
}

double policy_gradient_objective(std::span<const double> dist, const AlignmentInstance& inst) {
  return expected_reward(dist, inst);
}

}  // namespace qempo

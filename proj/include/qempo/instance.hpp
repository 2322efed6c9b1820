#pragma once

// Data model for alignment instances over finite candidate sets, plus the
// elementary information measures (entropy, KL, expected reward, quality mass)
// that the solvers and trainers are built on. Entropies and divergences are in
// nats.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qempo {

// Tolerance used to accept a vector as a probability distribution.
inline constexpr double kDistributionTolerance = 1e-9;

// Default epsilon of the ideal policy (mass left on negative candidates).
inline constexpr double kDefaultIdealEpsilon = 0.05;

enum class Quality { positive, negative };

struct CandidateOutcome {
  std::size_t index = 0;
  std::string label;
  double reward = 0.0;
  Quality quality = Quality::negative;
  double ref_prob = 0.0;
};

// A prompt with an enumerated candidate set. Validated on construction:
// n >= 2, indices 0..n-1, finite rewards, reference probabilities >= 0
// summing to 1 within kDistributionTolerance.
class AlignmentInstance {
 public:
  AlignmentInstance(std::string id, std::vector<CandidateOutcome> candidates);

  const std::string& id() const noexcept { return id_; }
  std::size_t size() const noexcept { return candidates_.size(); }
  const std::vector<CandidateOutcome>& candidates() const noexcept { return candidates_; }
  const CandidateOutcome& operator[](std::size_t i) const { return candidates_[i]; }

  const std::vector<double>& rewards() const noexcept { return rewards_; }
  const std::vector<double>& ref_probs() const noexcept { return ref_probs_; }
  bool is_positive(std::size_t i) const { return candidates_[i].quality == Quality::positive; }

  std::size_t positive_count() const noexcept { return positive_count_; }
  std::size_t negative_count() const noexcept { return size() - positive_count_; }

  // True when every reward is 1 on positives and 0 on negatives.
  bool has_binary_quality_rewards() const;

  // Convenience factory for tests and generators: positives listed by flag.
  static AlignmentInstance from_vectors(std::string id, std::vector<double> rewards,
                                        std::vector<double> ref_probs,
                                        std::vector<bool> positive);

 private:
  std::string id_;
  std::vector<CandidateOutcome> candidates_;
  std::vector<double> rewards_;
  std::vector<double> ref_probs_;
  std::size_t positive_count_ = 0;
};

// An explicit probability vector over one instance's candidates.
class PolicyDistribution {
 public:
  PolicyDistribution() = default;
  explicit PolicyDistribution(std::vector<double> probs, std::string instance_id = {});

  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::vector<double>& probs() const noexcept { return probs_; }

  std::size_t size() const noexcept { return probs_.size(); }
  const double* data() const noexcept { return probs_.data(); }
  auto begin() const noexcept { return probs_.begin(); }
  auto end() const noexcept { return probs_.end(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::string instance_id_;
  std::vector<double> probs_;
};

// Throws InvalidArgument unless probs is a distribution (entries >= 0, sum 1
// within kDistributionTolerance).
void validate_distribution(std::span<const double> probs);

class ScenarioSuite {
 public:
  ScenarioSuite() = default;
  ScenarioSuite(std::vector<AlignmentInstance> instances, std::uint64_t seed);

  const std::vector<AlignmentInstance>& instances() const noexcept { return instances_; }
  const AlignmentInstance& operator[](std::size_t i) const { return instances_[i]; }
  std::size_t size() const noexcept { return instances_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::vector<AlignmentInstance> instances_;
  std::uint64_t seed_ = 0;
};

// Tabular stand-in for pi(y|x): one logit vector per instance of a suite.
class LogitPolicy {
 public:
  LogitPolicy() = default;
  LogitPolicy(std::vector<std::string> instance_ids, std::vector<std::vector<double>> logits);

  // Logits set to ln pi_ref (candidates with pi_ref = 0 get a very negative logit).
  static LogitPolicy from_reference(const ScenarioSuite& suite);
  // All-zero logits (uniform policies).
  static LogitPolicy uniform(const ScenarioSuite& suite);

  std::size_t size() const noexcept { return logits_.size(); }
  const std::vector<std::string>& instance_ids() const noexcept { return instance_ids_; }
  const std::vector<double>& logits(std::size_t instance) const { return logits_.at(instance); }
  std::vector<double>& logits(std::size_t instance) { return logits_.at(instance); }
  const std::vector<std::vector<double>>& all_logits() const noexcept { return logits_; }

  PolicyDistribution distribution(std::size_t instance) const;
  std::vector<double> log_probs(std::size_t instance) const;

  // Adds scale * delta to every logit; delta must match the logit shape.
  void add_scaled(const std::vector<std::vector<double>>& delta, double scale);

 private:
  std::vector<std::string> instance_ids_;
  std::vector<std::vector<double>> logits_;
};

// Stable log(sum(exp(x))) with max shift. Empty input is invalid; -inf entries
// are allowed as long as one entry is finite.
double log_sum_exp(std::span<const double> values);

// Max-shifted log-space softmax. Non-finite input throws InvalidArgument.
std::vector<double> softmax_from_logits(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

double entropy(std::span<const double> dist);
double kl_divergence(std::span<const double> p, std::span<const double> q);
double expected_reward(std::span<const double> dist, const AlignmentInstance& inst);
double quality_mass(std::span<const double> dist, const AlignmentInstance& inst);

// Entropy of the policy conditioned on the positive set (0 when no mass there).
double positive_conditional_entropy(std::span<const double> dist, const AlignmentInstance& inst);

// Ideal policy: (1 - eps) spread uniformly on positives, eps on negatives.
// Requires 0 < eps < 1, both classes nonempty, and (1-eps)/|Y+| > eps/|Y-|.
PolicyDistribution ideal_policy(const AlignmentInstance& inst,
                                double epsilon = kDefaultIdealEpsilon);

struct KlDecomposition {
  double kl = 0.0;            // KL(dist || ideal)
  double entropy = 0.0;       // H(dist)
  double quality_term = 0.0;  // P_w * delta + ln(eps / |Y-|)
  double quality_gap = 0.0;   // delta = ln((1-eps)/|Y+|) - ln(eps/|Y-|)
};

// Splits KL(dist || ideal) into -entropy - quality_term.
KlDecomposition alignment_kl_decomposition(std::span<const double> dist,
                                           const AlignmentInstance& inst,
                                           double epsilon = kDefaultIdealEpsilon);

// Quality term as a function of the positive mass alone.
double quality_term_for_mass(double positive_mass, const AlignmentInstance& inst,
                             double epsilon = kDefaultIdealEpsilon);

// Plain policy-gradient objective sum_y r(y) pi(y).
double policy_gradient_objective(std::span<const double> dist, const AlignmentInstance& inst);

}  // namespace qempo

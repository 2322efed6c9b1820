#pragma once

// Offline preference training on tabular logit policies.
//
// All three losses share the pairwise-logistic shape
//   -ln sigma(a * (ln pi_w - ln pi_l) - b * (ln ref_w - ln ref_l))
// with (a, b) = (beta, beta) for DPO, (1/lambda, 0) for QEMPO and
// (1/l1 + l2/l1, l2/l1) for QEMPO-KL.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qempo/instance.hpp"
#include "qempo/rng.hpp"

namespace qempo {

struct PreferencePair {
  std::size_t instance = 0;  // position in the suite
  std::size_t winner = 0;
  std::size_t loser = 0;
};

enum class OfflineMethod { dpo, qempo, qempo_kl };

const char* to_string(OfflineMethod method);
OfflineMethod offline_method_from_string(const std::string& name);

struct OfflineConfig {
  OfflineMethod method = OfflineMethod::qempo;
  double beta = 1e-2;         // DPO
  double inv_lambda = 4e-3;   // QEMPO: 1/lambda
  double inv_lambda1 = 4e-3;  // QEMPO-KL: 1/lambda1
  double ratio21 = 1e-2;      // QEMPO-KL: lambda2/lambda1
  double learning_rate = 1.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  std::size_t eval_interval = 10;
};

void validate(const OfflineConfig& config);

// Draws `count` unordered pairs uniformly from one instance and orders each by
// the Bradley-Terry probability sigma(r_i - r_j).
std::vector<PreferencePair> sample_preferences(const AlignmentInstance& inst,
                                               std::size_t instance_index, std::size_t count,
                                               Rng& rng);

// Every unordered pair once, higher reward winning; equal-reward pairs appear
// in both orders so the set carries no preference between them.
std::vector<PreferencePair> exhaustive_preferences(const AlignmentInstance& inst,
                                                   std::size_t instance_index);

// Margin coefficients (a, b) of a method.
struct MarginCoefficients {
  double policy = 0.0;
  double reference = 0.0;
};
MarginCoefficients margin_coefficients(const OfflineConfig& config);

double dpo_loss(const LogitPolicy& policy, const ScenarioSuite& suite,
                std::span<const PreferencePair> pairs, double beta);
double qempo_offline_loss(const LogitPolicy& policy, std::span<const PreferencePair> pairs,
                          double inv_lambda);
double qempo_kl_offline_loss(const LogitPolicy& policy, const ScenarioSuite& suite,
                             std::span<const PreferencePair> pairs, double inv_lambda1,
                             double ratio21);

double offline_loss(const OfflineConfig& config, const LogitPolicy& policy,
                    const ScenarioSuite& suite, std::span<const PreferencePair> pairs);

// Analytic gradient of offline_loss with respect to every logit. Shape matches
// policy.all_logits().
std::vector<std::vector<double>> offline_gradient(const OfflineConfig& config,
                                                  const LogitPolicy& policy,
                                                  const ScenarioSuite& suite,
                                                  std::span<const PreferencePair> pairs);

struct OfflineHistoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double entropy_mean = 0.0;
  double quality_mass_mean = 0.0;
};

struct OfflineResult {
  LogitPolicy policy;       // after the last step
  LogitPolicy best_policy;  // lowest held-out loss among evaluated steps
  std::size_t best_step = 0;
  double best_heldout_loss = 0.0;
  std::vector<OfflineHistoryRow> history;
};

// Plain gradient descent from ln pi_ref. History is recorded at step 0, every
// eval_interval steps and at the final step. When heldout is empty the
// training pairs select the best model.
OfflineResult train_offline(const ScenarioSuite& suite, const OfflineConfig& config,
                            std::span<const PreferencePair> train,
                            std::span<const PreferencePair> heldout = {});

// Suite-wide preference set: exhaustive pairs for every instance.
std::vector<PreferencePair> exhaustive_suite_preferences(const ScenarioSuite& suite);

std::string offline_history_csv(const std::vector<OfflineHistoryRow>& history);

// Mean entropy and mean quality mass over the suite.
struct SuiteSummary {
  double entropy_mean = 0.0;
  double quality_mass_mean = 0.0;
  double expected_reward_mean = 0.0;
};
SuiteSummary summarize(const LogitPolicy& policy, const ScenarioSuite& suite);

}  // namespace qempo

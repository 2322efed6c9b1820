#pragma once

// Online (group-sampling) training on tabular logit policies.
//
// Each step samples a group of G candidates per instance from the current
// policy, centers the rewards within the group (GRPO advantages), and takes
// one gradient step on the configured group loss. Group moments divide by G.
//
// With b = 1/lambda (QEMPO) or b = 1/l1 + l2/l1, c = l2/l1 (QEMPO-KL), the
// canonical losses are
//   QEMPO     -2b Cov(r, ln pi) + gate * b^2 Var(ln pi)
//   QEMPO-KL  -2b Cov(r, ln pi) - 2bc Cov(ln pi, ln pi_ref) + gate * b^2 Var(ln pi)
// which equal, up to terms that do not depend on the policy, the group mean
// squared error between centered implied rewards and centered rewards.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qempo/instance.hpp"
#include "qempo/rng.hpp"

namespace qempo {

struct GroupSample {
  std::size_t instance = 0;
  std::vector<std::size_t> indices;
  std::vector<double> rewards;
  std::vector<double> log_probs;      // ln pi at sampling time
  std::vector<double> ref_log_probs;  // ln pi_ref

  std::size_t size() const noexcept { return indices.size(); }
};

// Throws InvalidArgument unless all vectors have the same length G >= 2 and
// every log-probability is finite.
void validate(const GroupSample& group);

enum class OnlineMethod { qempo, qempo_kl, grpo_baseline };
enum class VarianceGate { all_correct, any_correct, always };
// `listing` reproduces the published reference snippets; see online.cpp.
enum class OnlineLossForm { canonical, listing };

const char* to_string(OnlineMethod method);
const char* to_string(VarianceGate gate);
const char* to_string(OnlineLossForm form);
OnlineMethod online_method_from_string(const std::string& name);
VarianceGate variance_gate_from_string(const std::string& name);
OnlineLossForm online_loss_form_from_string(const std::string& name);

// Whether the entropy-encouraging variance term applies to this group. A
// sampled response counts as correct when its reward is 1 (0/1 rewards).
bool gate_open(VarianceGate gate, std::span<const double> rewards);

struct OnlineConfig {
  OnlineMethod method = OnlineMethod::qempo;
  std::size_t group_size = 10;
  double inv_lambda = 4e-3;
  double inv_lambda1 = 4e-3;
  double ratio21 = 1e-2;
  double beta = 1e-2;
  double learning_rate = 1.0;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  VarianceGate gate = VarianceGate::all_correct;
  bool std_normalize = false;
  OnlineLossForm form = OnlineLossForm::canonical;
  std::size_t eval_interval = 10;
  std::size_t eval_samples = 100;
  std::vector<std::size_t> pass_k = {1, 4, 16};
};

void validate(const OnlineConfig& config);

// Rewards minus the group mean; optionally divided by (std + 1e-8).
std::vector<double> grpo_advantages(std::span<const double> rewards, bool std_normalize = false);

double qempo_online_loss(const GroupSample& group, double inv_lambda, VarianceGate gate);
double qempo_kl_online_loss(const GroupSample& group, double inv_lambda1, double ratio21,
                            VarianceGate gate);
// -E[(r - mean r) ln pi] + beta * E[ln pi - ln pi_ref].
double rlhf_grpo_baseline_loss(const GroupSample& group, double beta);

// Terms of the centered-implied-reward MSE that do not depend on the policy:
// loss + offset == mse when the gate is open.
double qempo_online_offset(const GroupSample& group);
double qempo_kl_online_offset(const GroupSample& group, double ratio21);
// E[(b (ln pi - mean) - c (ln pi_ref - mean_ref) - (r - mean r))^2].
double implied_reward_mse(const GroupSample& group, double policy_coef, double ref_coef);

struct GroupLoss {
  double loss = 0.0;
  std::vector<double> d_log_probs;  // dloss / d ln pi(y_g) for each sample g
};

// Loss of one group under the configured method and its derivative with
// respect to the sampled log-probabilities. `current_log_probs` are the
// differentiable values; `group.log_probs` is treated as the frozen sampling
// policy (used only by the listing form).
GroupLoss online_group_loss(const OnlineConfig& config, const GroupSample& group,
                            std::span<const double> current_log_probs);

// Draws a group of `size` candidates from the policy of one instance.
GroupSample sample_group(const LogitPolicy& policy, const ScenarioSuite& suite,
                         std::size_t instance, std::size_t size, Rng& rng);

// Mean loss over groups (one per instance, unweighted) at `policy`.
double online_loss(const OnlineConfig& config, const LogitPolicy& policy,
                   std::span<const GroupSample> groups);

// Analytic gradient of online_loss with respect to the logits.
std::vector<std::vector<double>> online_gradient(const OnlineConfig& config,
                                                 const LogitPolicy& policy,
                                                 std::span<const GroupSample> groups);

struct OnlineHistoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double entropy_mean = 0.0;
  double expected_reward_mean = 0.0;
  std::vector<double> pass_at_k;  // aligned with config.pass_k
};

struct OnlineResult {
  LogitPolicy policy;
  std::vector<OnlineHistoryRow> history;
};

// Deterministic per seed. Logits start at ln pi_ref. Rows are recorded at
// step 0, every eval_interval steps and at the final step; the loss column is
// the mean group loss of that step (NaN at step 0, before any batch).
OnlineResult train_online(const ScenarioSuite& suite, const OnlineConfig& config);

// pass@k per configured k, averaged over instances, from eval_samples draws
// per instance on an evaluation stream independent of training.
std::vector<double> evaluate_pass_at_k(const LogitPolicy& policy, const ScenarioSuite& suite,
                                       std::size_t samples, std::span<const std::size_t> ks,
                                       Rng& rng);

std::string online_history_csv(const OnlineConfig& config,
                                const std::vector<OnlineHistoryRow>& history);

}  // namespace qempo

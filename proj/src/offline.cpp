#include "qempo/offline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qempo/errors.hpp"
#include "qempo/format.hpp"

namespace qempo {

const char* to_string(OfflineMethod method) {
  switch (method) {
    case OfflineMethod::dpo: return "dpo";
    case OfflineMethod::qempo: return "qempo";
    case OfflineMethod::qempo_kl: return "qempo-kl";
  }
  return "unknown";
}

OfflineMethod offline_method_from_string(const std::string& name) {
  if (name == "dpo") return OfflineMethod::dpo;
  if (name == "qempo") return OfflineMethod::qempo;
  if (name == "qempo-kl" || name == "qempo_kl") return OfflineMethod::qempo_kl;
  throw InvalidArgument("unknown offline method '" + name + "'");
}

void validate(const OfflineConfig& config) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument(std::string(name) + " must be a finite positive number");
    }
  };
  switch (config.method) {
    case OfflineMethod::dpo: positive(config.beta, "beta"); break;
    case OfflineMethod::qempo: positive(config.inv_lambda, "inv_lambda"); break;
    case OfflineMethod::qempo_kl:
      positive(config.inv_lambda1, "inv_lambda1");
      positive(config.ratio21, "ratio21");
      break;
  }
  positive(config.learning_rate, "learning_rate");
  if (config.eval_interval == 0) throw InvalidArgument("eval_interval must be >= 1");
}

std::vector<PreferencePair> sample_preferences(const AlignmentInstance& inst,
                                               std::size_t instance_index, std::size_t count,
                                               Rng& rng) {
  const std::size_t n = inst.size();
  if (n < 2) throw InvalidArgument("preference sampling needs at least 2 candidates");
  if (count == 0) throw InvalidArgument("preference count must be >= 1");
  std::vector<PreferencePair> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    // Uniform unordered pair: first index uniform, second uniform among the rest.
    std::size_t i = rng.below(n);
    std::size_t j = rng.below(n - 1);
    if (j >= i) ++j;
    if (i > j) std::swap(i, j);
    const double p_i_wins = 1.0 / (1.0 + std::exp(inst.rewards()[j] - inst.rewards()[i]));
    if (rng.bernoulli(p_i_wins)) {
      pairs.push_back({instance_index, i, j});
    } else {
      pairs.push_back({instance_index, j, i});
    }
  }
  return pairs;
}

std::vector<PreferencePair> exhaustive_preferences(const AlignmentInstance& inst,
                                                   std::size_t instance_index) {
  std::vector<PreferencePair> pairs;
  const auto& r = inst.rewards();
  for (std::size_t i = 0; i < inst.size(); ++i) {
    for (std::size_t j = i + 1; j < inst.size(); ++j) {
      if (r[i] > r[j]) {
        pairs.push_back({instance_index, i, j});
      } else if (r[j] > r[i]) {
        pairs.push_back({instance_index, j, i});
      } else {
        pairs.push_back({instance_index, i, j});
        pairs.push_back({instance_index, j, i});
      }
    }
  }
  return pairs;
}

std::vector<PreferencePair> exhaustive_suite_preferences(const ScenarioSuite& suite) {
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    auto part = exhaustive_preferences(suite[i], i);
    pairs.insert(pairs.end(), part.begin(), part.end());
  }
  return pairs;
}

MarginCoefficients margin_coefficients(const OfflineConfig& config) {
  switch (config.method) {
    case OfflineMethod::dpo: return {config.beta, config.beta};
    case OfflineMethod::qempo: return {config.inv_lambda, 0.0};
    case OfflineMethod::qempo_kl:
      return {config.inv_lambda1 + config.ratio21, config.ratio21};
  }
  return {};
}

namespace {

// -ln sigma(m), stable for both signs.
double neg_log_sigmoid(double m) {
  return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
}

double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

void check_pair(const LogitPolicy& policy, const PreferencePair& pair) {
  if (pair.instance >= policy.size()) throw InvalidArgument("pair instance out of range");
  const std::size_t n = policy.logits(pair.instance).size();
  if (pair.winner >= n || pair.loser >= n) throw InvalidArgument("pair candidate out of range");
  if (pair.winner == pair.loser) throw InvalidArgument("pair winner equals loser");
}

double ref_log_margin(const ScenarioSuite& suite, const PreferencePair& pair) {
  const auto& q = suite[pair.instance].ref_probs();
  if (q[pair.winner] <= 0.0 || q[pair.loser] <= 0.0) {
    throw SupportMismatch("reference probability is zero on a preference pair of instance '" +
                          suite[pair.instance].id() + "'");
  }
  return std::log(q[pair.winner]) - std::log(q[pair.loser]);
}

// ln pi_w - ln pi_l; the softmax normalizer cancels.
double policy_log_margin(const LogitPolicy& policy, const PreferencePair& pair) {
  const auto& logits = policy.logits(pair.instance);
  return logits[pair.winner] - logits[pair.loser];
}

double pairwise_loss(const LogitPolicy& policy, const ScenarioSuite* suite,
                     std::span<const PreferencePair> pairs, MarginCoefficients coef) {
  if (pairs.empty()) throw InvalidArgument("no preference pairs");
  double total = 0.0;
  for (const auto& pair : pairs) {
    check_pair(policy, pair);
    double margin = coef.policy * policy_log_margin(policy, pair);
    if (suite != nullptr) margin -= coef.reference * ref_log_margin(*suite, pair);
    total += neg_log_sigmoid(margin);
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace

double dpo_loss(const LogitPolicy& policy, const ScenarioSuite& suite,
                std::span<const PreferencePair> pairs, double beta) {
  OfflineConfig config;
  config.method = OfflineMethod::dpo;
  config.beta = beta;
  return offline_loss(config, policy, suite, pairs);
}

double qempo_offline_loss(const LogitPolicy& policy, std::span<const PreferencePair> pairs,
                          double inv_lambda) {
  if (!(inv_lambda > 0.0)) throw InvalidArgument("inv_lambda must be > 0");
  return pairwise_loss(policy, nullptr, pairs, {inv_lambda, 0.0});
}

double qempo_kl_offline_loss(const LogitPolicy& policy, const ScenarioSuite& suite,
                             std::span<const PreferencePair> pairs, double inv_lambda1,
                             double ratio21) {
  if (!(inv_lambda1 > 0.0)) throw InvalidArgument("inv_lambda1 must be > 0");
  if (!(ratio21 >= 0.0)) throw InvalidArgument("ratio21 must be >= 0");
  return pairwise_loss(policy, &suite, pairs, {inv_lambda1 + ratio21, ratio21});
}

double offline_loss(const OfflineConfig& config, const LogitPolicy& policy,
                    const ScenarioSuite& suite, std::span<const PreferencePair> pairs) {
  const MarginCoefficients coef = margin_coefficients(config);
  if (!(coef.policy > 0.0)) throw InvalidArgument("loss coefficient must be > 0");
  return pairwise_loss(policy, coef.reference != 0.0 ? &suite : nullptr, pairs, coef);
}

std::vector<std::vector<double>> offline_gradient(const OfflineConfig& config,
                                                  const LogitPolicy& policy,
                                                  const ScenarioSuite& suite,
                                                  std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw InvalidArgument("no preference pairs");
  const MarginCoefficients coef = margin_coefficients(config);
  std::vector<std::vector<double>> grad;
  for (const auto& row : policy.all_logits()) grad.emplace_back(row.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pair : pairs) {
    check_pair(policy, pair);
    double margin = coef.policy * policy_log_margin(policy, pair);
    if (coef.reference != 0.0) margin -= coef.reference * ref_log_margin(suite, pair);
    // d/dm of -ln sigma(m) is -sigma(-m); d m / d theta = a (e_w - e_l).
    const double g = -sigmoid(-margin) * coef.policy * weight;
    grad[pair.instance][pair.winner] += g;
    grad[pair.instance][pair.loser] -= g;
  }
  return grad;
}

SuiteSummary summarize(const LogitPolicy& policy, const ScenarioSuite& suite) {
  SuiteSummary out;
  if (suite.size() == 0) return out;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const PolicyDistribution dist = policy.distribution(i);
    out.entropy_mean += entropy(dist.probs());
    out.quality_mass_mean += quality_mass(dist.probs(), suite[i]);
    out.expected_reward_mean += expected_reward(dist.probs(), suite[i]);
  }
  const double n = static_cast<double>(suite.size());
  out.entropy_mean /= n;
  out.quality_mass_mean /= n;
  out.expected_reward_mean /= n;
  return out;
}

OfflineResult train_offline(const ScenarioSuite& suite, const OfflineConfig& config,
                            std::span<const PreferencePair> train,
                            std::span<const PreferencePair> heldout) {
  validate(config);
  if (train.empty()) throw InvalidArgument("no training pairs");
  const std::span<const PreferencePair> selection = heldout.empty() ? train : heldout;

  // Fixed pair order for minibatches, shuffled once from the seed.
  std::vector<PreferencePair> order(train.begin(), train.end());
  Rng rng(derive_seed(config.seed, 1));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t batch =
      (config.batch_size == 0 || config.batch_size >= order.size()) ? order.size()
                                                                    : config.batch_size;

  OfflineResult result;
  LogitPolicy policy = LogitPolicy::from_reference(suite);
  double last_finite = std::numeric_limits<double>::quiet_NaN();

  auto record = [&](std::size_t step) {
    const double loss = offline_loss(config, policy, suite, train);
    if (!std::isfinite(loss)) {
      throw TrainingFailure(step, last_finite, "non-finite offline loss at step " +
                                                   std::to_string(step));
    }
    last_finite = loss;
    const SuiteSummary summary = summarize(policy, suite);
    result.history.push_back({step, loss, summary.entropy_mean, summary.quality_mass_mean});
    const double selection_loss =
        heldout.empty() ? loss : offline_loss(config, policy, suite, selection);
    if (result.history.size() == 1 || selection_loss < result.best_heldout_loss) {
      result.best_heldout_loss = selection_loss;
      result.best_step = step;
      result.best_policy = policy;
    }
  };

  record(0);
  std::size_t cursor = 0;
  std::vector<PreferencePair> minibatch;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    minibatch.clear();
    for (std::size_t k = 0; k < batch; ++k) {
      minibatch.push_back(order[cursor]);
      cursor = (cursor + 1) % order.size();
    }
    const auto grad = offline_gradient(config, policy, suite, minibatch);
    policy.add_scaled(grad, -config.learning_rate);
    for (const auto& row : policy.all_logits()) {
      for (double v : row) {
        if (!std::isfinite(v)) {
          throw TrainingFailure(step, last_finite, "non-finite logits at step " +
                                                       std::to_string(step));
        }
      }
    }
    if (step % config.eval_interval == 0 || step == config.steps) record(step);
  }
  result.policy = std::move(policy);
  return result;
}

std::string offline_history_csv(const std::vector<OfflineHistoryRow>& history) {
  std::string out = "step,loss,entropy_mean,quality_mass_mean\n";
  for (const auto& row : history) {
    out += std::to_string(row.step) + "," + format_double(row.loss) + "," +
           format_double(row.entropy_mean) + "," + format_double(row.quality_mass_mean) + "\n";
  }
  return out;
}

}  // namespace qempo

#include "qempo/online.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qempo/errors.hpp"
#include "qempo/format.hpp"
#include "qempo/metrics.hpp"
#include "qempo/offline.hpp"

namespace qempo {

const char* to_string(OnlineMethod method) {
  switch (method) {
    case OnlineMethod::qempo: return "qempo";
    case OnlineMethod::qempo_kl: return "qempo-kl";
    case OnlineMethod::grpo_baseline: return "grpo-rlhf";
  }
  return "unknown";
}

const char* to_string(VarianceGate gate) {
  switch (gate) {
    case VarianceGate::all_correct: return "all_correct";
    case VarianceGate::any_correct: return "any_correct";
    case VarianceGate::always: return "always";
  }
  return "unknown";
}

const char* to_string(OnlineLossForm form) {
  switch (form) {
    case OnlineLossForm::canonical: return "canonical";
    case OnlineLossForm::listing: return "paper-code-variant";
  }
  return "unknown";
}

OnlineMethod online_method_from_string(const std::string& name) {
  if (name == "qempo") return OnlineMethod::qempo;
  if (name == "qempo-kl" || name == "qempo_kl") return OnlineMethod::qempo_kl;
  if (name == "grpo-rlhf" || name == "grpo" || name == "grpo_rlhf_baseline") {
    return OnlineMethod::grpo_baseline;
  }
  throw InvalidArgument("unknown online method '" + name + "'");
}

VarianceGate variance_gate_from_string(const std::string& name) {
  if (name == "all_correct") return VarianceGate::all_correct;
  if (name == "any_correct") return VarianceGate::any_correct;
  if (name == "always") return VarianceGate::always;
  throw InvalidArgument("unknown variance gate '" + name + "'");
}

OnlineLossForm online_loss_form_from_string(const std::string& name) {
  if (name == "canonical") return OnlineLossForm::canonical;
  if (name == "paper-code-variant" || name == "listing") return OnlineLossForm::listing;
  throw InvalidArgument("unknown online loss form '" + name + "'");
}

void validate(const GroupSample& group) {
  const std::size_t g = group.indices.size();
  if (g < 2) throw InvalidArgument("group needs at least 2 samples");
  if (group.rewards.size() != g || group.log_probs.size() != g || group.ref_log_probs.size() != g) {
    throw InvalidArgument("group vectors differ in length");
  }
  for (std::size_t i = 0; i < g; ++i) {
    if (!std::isfinite(group.rewards[i]) || !std::isfinite(group.log_probs[i]) ||
        !std::isfinite(group.ref_log_probs[i])) {
      throw InvalidArgument("group contains a non-finite value");
    }
  }
}

bool gate_open(VarianceGate gate, std::span<const double> rewards) {
  switch (gate) {
    case VarianceGate::always: return true;
    case VarianceGate::all_correct:
      return std::all_of(rewards.begin(), rewards.end(), [](double r) { return r == 1.0; });
    case VarianceGate::any_correct:
      return std::any_of(rewards.begin(), rewards.end(), [](double r) { return r == 1.0; });
  }
  return false;
}

void validate(const OnlineConfig& config) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument(std::string(name) + " must be a finite positive number");
    }
  };
  if (config.group_size < 2) throw InvalidArgument("group_size must be >= 2");
  switch (config.method) {
    case OnlineMethod::qempo: positive(config.inv_lambda, "inv_lambda"); break;
    case OnlineMethod::qempo_kl:
      positive(config.inv_lambda1, "inv_lambda1");
      if (!(config.ratio21 >= 0.0)) throw InvalidArgument("ratio21 must be >= 0");
      break;
    case OnlineMethod::grpo_baseline:
      if (!(config.beta >= 0.0)) throw InvalidArgument("beta must be >= 0");
      break;
  }
  positive(config.learning_rate, "learning_rate");
  if (config.eval_interval == 0) throw InvalidArgument("eval_interval must be >= 1");
  for (std::size_t k : config.pass_k) {
    if (k == 0 || k > config.eval_samples) {
      throw InvalidArgument("pass@k needs 1 <= k <= eval_samples");
    }
  }
}

std::vector<double> grpo_advantages(std::span<const double> rewards, bool std_normalize) {
  if (rewards.size() < 2) throw InvalidArgument("advantages need a group of at least 2");
  const double g = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / g;
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] - mean;
  if (std_normalize) {
    double var = 0.0;
    for (double a : out) var += a * a;
    const double scale = 1.0 / (std::sqrt(var / g) + 1e-8);
    for (double& a : out) a *= scale;
  }
  return out;
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Group moments dividing by G, with derivatives with respect to x.
struct Moments {
  std::span<const double> x;
  double x_mean;

  explicit Moments(std::span<const double> values) : x(values), x_mean(mean_of(values)) {}

  // mean(w * (x - mean x)); w need not be centered.
  double cov(std::span<const double> w) const {
    const double w_mean = mean_of(w);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += (w[i] - w_mean) * (x[i] - x_mean);
    return total / static_cast<double>(x.size());
  }
  double var() const {
    double total = 0.0;
    for (double v : x) total += (v - x_mean) * (v - x_mean);
    return total / static_cast<double>(x.size());
  }
  // d cov(w, x) / d x_g
  std::vector<double> d_cov(std::span<const double> w) const {
    const double w_mean = mean_of(w);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = (w[i] - w_mean) / static_cast<double>(x.size());
    return d;
  }
  std::vector<double> d_var() const {
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      d[i] = 2.0 * (x[i] - x_mean) / static_cast<double>(x.size());
    }
    return d;
  }
};

void accumulate(std::vector<double>& into, const std::vector<double>& d, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * d[i];
}

// Canonical form: -2b Cov(a, l) - 2b c Cov(l, ref) + gate b^2 Var(l).
GroupLoss canonical_loss(std::span<const double> advantages, std::span<const double> log_probs,
                         std::span<const double> ref_log_probs, double b, double c, bool gate) {
  const Moments m(log_probs);
  GroupLoss out;
  out.d_log_probs.assign(log_probs.size(), 0.0);
  out.loss = -2.0 * b * m.cov(advantages);
  accumulate(out.d_log_probs, m.d_cov(advantages), -2.0 * b);
  if (c != 0.0) {
    out.loss += -2.0 * b * c * m.cov(ref_log_probs);
    accumulate(out.d_log_probs, m.d_cov(ref_log_probs), -2.0 * b * c);
  }
  if (gate) {
    out.loss += b * b * m.var();
    accumulate(out.d_log_probs, m.d_var(), b * b);
  }
  return out;
}

// The published reference snippets:
//   score = l - mean(l), score_old = l_old - mean(l_old)
//   adv   = mean(-a * l)
//   cov   = c * mean(score * score_old)
//   var   = mean(score^2) if all rewards are 1 else 0
//   loss  = 2b (adv + c * cov + b * var)
// Relative to the canonical form the covariance sign is flipped, it is taken
// against the sampling-time log-probabilities instead of pi_ref, and the
// variance coefficient is doubled.
GroupLoss listing_loss(std::span<const double> advantages, std::span<const double> log_probs,
                       std::span<const double> old_log_probs, double b, double c, bool gate) {
  const Moments m(log_probs);
  const double g = static_cast<double>(log_probs.size());
  GroupLoss out;
  out.d_log_probs.assign(log_probs.size(), 0.0);

  double adv = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    adv -= advantages[i] * log_probs[i];
    out.d_log_probs[i] -= 2.0 * b * advantages[i] / g;
  }
  adv /= g;
  double inner = adv;
  if (c != 0.0) {
    inner += c * c * m.cov(old_log_probs);
    accumulate(out.d_log_probs, m.d_cov(old_log_probs), 2.0 * b * c * c);
  }
  if (gate) {
    inner += b * m.var();
    accumulate(out.d_log_probs, m.d_var(), 2.0 * b * b);
  }
  out.loss = 2.0 * b * inner;
  return out;
}

}  // namespace

GroupLoss online_group_loss(const OnlineConfig& config, const GroupSample& group,
                            std::span<const double> current_log_probs) {
  validate(group);
  if (current_log_probs.size() != group.size()) {
    throw InvalidArgument("current log-probabilities do not match the group");
  }
  const std::vector<double> advantages = grpo_advantages(group.rewards, config.std_normalize);
  const bool gate = gate_open(config.gate, group.rewards);
  const bool listing = config.form == OnlineLossForm::listing;

  switch (config.method) {
    case OnlineMethod::qempo: {
      const double b = config.inv_lambda;
      return listing ? listing_loss(advantages, current_log_probs, group.log_probs, b, 0.0, gate)
                     : canonical_loss(advantages, current_log_probs, group.ref_log_probs, b, 0.0,
                                      gate);
    }
    case OnlineMethod::qempo_kl: {
      const double c = config.ratio21;
      const double b = config.inv_lambda1 + c;
      return listing ? listing_loss(advantages, current_log_probs, group.log_probs, b, c, gate)
                     : canonical_loss(advantages, current_log_probs, group.ref_log_probs, b, c,
                                      gate);
    }
    case OnlineMethod::grpo_baseline: {
      const double g = static_cast<double>(group.size());
      GroupLoss out;
      out.d_log_probs.assign(group.size(), 0.0);
      for (std::size_t i = 0; i < group.size(); ++i) {
        out.loss += -advantages[i] * current_log_probs[i] +
                    config.beta * (current_log_probs[i] - group.ref_log_probs[i]);
        out.d_log_probs[i] = (-advantages[i] + config.beta) / g;
      }
      out.loss /= g;
      return out;
    }
  }
  throw InvalidArgument("unknown online method");
}

double qempo_online_loss(const GroupSample& group, double inv_lambda, VarianceGate gate) {
  OnlineConfig config;
  config.method = OnlineMethod::qempo;
  config.inv_lambda = inv_lambda;
  config.gate = gate;
  if (!(inv_lambda > 0.0)) throw InvalidArgument("inv_lambda must be > 0");
  return online_group_loss(config, group, group.log_probs).loss;
}

double qempo_kl_online_loss(const GroupSample& group, double inv_lambda1, double ratio21,
                            VarianceGate gate) {
  OnlineConfig config;
  config.method = OnlineMethod::qempo_kl;
  config.inv_lambda1 = inv_lambda1;
  config.ratio21 = ratio21;
  config.gate = gate;
  if (!(inv_lambda1 > 0.0)) throw InvalidArgument("inv_lambda1 must be > 0");
  if (!(ratio21 >= 0.0)) throw InvalidArgument("ratio21 must be >= 0");
  return online_group_loss(config, group, group.log_probs).loss;
}

double rlhf_grpo_baseline_loss(const GroupSample& group, double beta) {
  OnlineConfig config;
  config.method = OnlineMethod::grpo_baseline;
  config.beta = beta;
  return online_group_loss(config, group, group.log_probs).loss;
}

double qempo_online_offset(const GroupSample& group) {
  validate(group);
  return Moments(group.rewards).var();
}

double qempo_kl_online_offset(const GroupSample& group, double ratio21) {
  validate(group);
  const Moments ref(group.ref_log_probs);
  // Var(r) + c^2 Var(ln pi_ref) + 2c Cov(r, ln pi_ref)
  return Moments(group.rewards).var() + ratio21 * ratio21 * ref.var() +
         2.0 * ratio21 * ref.cov(group.rewards);
}

double implied_reward_mse(const GroupSample& group, double policy_coef, double ref_coef) {
  validate(group);
  const double l_mean = mean_of(group.log_probs);
  const double q_mean = mean_of(group.ref_log_probs);
  const double r_mean = mean_of(group.rewards);
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double implied =
        policy_coef * (group.log_probs[i] - l_mean) - ref_coef * (group.ref_log_probs[i] - q_mean);
    const double err = implied - (group.rewards[i] - r_mean);
    total += err * err;
  }
  return total / static_cast<double>(group.size());
}

GroupSample sample_group(const LogitPolicy& policy, const ScenarioSuite& suite,
                         std::size_t instance, std::size_t size, Rng& rng) {
  const AlignmentInstance& inst = suite[instance];
  const std::vector<double> log_probs = policy.log_probs(instance);
  std::vector<double> probs(log_probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(log_probs[i]);
  GroupSample group;
  group.instance = instance;
  for (std::size_t k = 0; k < size; ++k) {
    const std::size_t y = rng.categorical(probs);
    const double q = inst.ref_probs()[y];
    if (q <= 0.0) {
      throw SupportMismatch("sampled candidate " + std::to_string(y) + " of instance '" +
                            inst.id() + "' has zero reference probability");
    }
    group.indices.push_back(y);
    group.rewards.push_back(inst.rewards()[y]);
    group.log_probs.push_back(log_probs[y]);
    group.ref_log_probs.push_back(std::log(q));
  }
  return group;
}

namespace {

std::vector<double> current_log_probs(const LogitPolicy& policy, const GroupSample& group) {
  const std::vector<double> all = policy.log_probs(group.instance);
  std::vector<double> out;
  for (std::size_t y : group.indices) out.push_back(all.at(y));
  return out;
}

}  // namespace

double online_loss(const OnlineConfig& config, const LogitPolicy& policy,
                   std::span<const GroupSample> groups) {
  if (groups.empty()) throw InvalidArgument("no groups");
  double total = 0.0;
  for (const auto& group : groups) {
    total += online_group_loss(config, group, current_log_probs(policy, group)).loss;
  }
  return total / static_cast<double>(groups.size());
}

std::vector<std::vector<double>> online_gradient(const OnlineConfig& config,
                                                 const LogitPolicy& policy,
                                                 std::span<const GroupSample> groups) {
  if (groups.empty()) throw InvalidArgument("no groups");
  std::vector<std::vector<double>> grad;
  for (const auto& row : policy.all_logits()) grad.emplace_back(row.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(groups.size());
  for (const auto& group : groups) {
    const GroupLoss gl = online_group_loss(config, group, current_log_probs(policy, group));
    const PolicyDistribution dist = policy.distribution(group.instance);
    auto& row = grad[group.instance];
    // d ln pi(y) / d theta_j = [j == y] - pi_j
    for (std::size_t g = 0; g < group.size(); ++g) {
      const double d = gl.d_log_probs[g] * weight;
      row[group.indices[g]] += d;
      for (std::size_t j = 0; j < row.size(); ++j) row[j] -= d * dist[j];
    }
  }
  return grad;
}

std::vector<double> evaluate_pass_at_k(const LogitPolicy& policy, const ScenarioSuite& suite,
                                       std::size_t samples, std::span<const std::size_t> ks,
                                       Rng& rng) {
  std::vector<double> out(ks.size(), 0.0);
  if (suite.size() == 0) return out;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const PolicyDistribution dist = policy.distribution(i);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      if (suite[i].is_positive(rng.categorical(dist.probs()))) ++correct;
    }
    for (std::size_t k = 0; k < ks.size(); ++k) {
      out[k] += pass_at_k({samples, correct, ks[k]});
    }
  }
  for (double& v : out) v /= static_cast<double>(suite.size());
  return out;
}

OnlineResult train_online(const ScenarioSuite& suite, const OnlineConfig& config) {
  validate(config);
  if (suite.size() == 0) throw InvalidArgument("empty suite");
  Rng train_rng(derive_seed(config.seed, 3));
  Rng eval_rng(derive_seed(config.seed, 4));

  OnlineResult result;
  LogitPolicy policy = LogitPolicy::from_reference(suite);
  double last_finite = 0.0;

  auto record = [&](std::size_t step, double loss) {
    const SuiteSummary summary = summarize(policy, suite);
    OnlineHistoryRow row;
    row.step = step;
    row.loss = loss;
    row.entropy_mean = summary.entropy_mean;
    row.expected_reward_mean = summary.expected_reward_mean;
    row.pass_at_k = evaluate_pass_at_k(policy, suite, config.eval_samples, config.pass_k, eval_rng);
    result.history.push_back(std::move(row));
  };

  record(0, std::numeric_limits<double>::quiet_NaN());  // no batch has been drawn yet
  std::vector<GroupSample> groups;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    groups.clear();
    for (std::size_t i = 0; i < suite.size(); ++i) {
      groups.push_back(sample_group(policy, suite, i, config.group_size, train_rng));
    }
    const double loss = online_loss(config, policy, groups);
    if (!std::isfinite(loss)) {
      throw TrainingFailure(step, last_finite,
                            "non-finite online loss at step " + std::to_string(step));
    }
    last_finite = loss;
    policy.add_scaled(online_gradient(config, policy, groups), -config.learning_rate);
    for (const auto& row : policy.all_logits()) {
      for (double v : row) {
        if (!std::isfinite(v)) {
          throw TrainingFailure(step, last_finite,
                                "non-finite logits at step " + std::to_string(step));
        }
      }
    }
    if (step % config.eval_interval == 0 || step == config.steps) record(step, loss);
  }
  result.policy = std::move(policy);
  return result;
}

std::string online_history_csv(const OnlineConfig& config,
                               const std::vector<OnlineHistoryRow>& history) {
  std::string out = "step,method,loss,entropy_mean,expected_reward_mean";
  for (std::size_t k : config.pass_k) out += ",pass@" + std::to_string(k);
  out += "\n";
  for (const auto& row : history) {
    out += std::to_string(row.step) + "," + to_string(config.method) + "," +
           format_double(row.loss) + "," + format_double(row.entropy_mean) + "," +
           format_double(row.expected_reward_mean);
    for (double v : row.pass_at_k) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace qempo

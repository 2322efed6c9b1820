#include "qempo/solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace qempo {

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::slack: return "slack";
    case SolveStatus::binding: return "binding";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::saturated: return "saturated";
  }
  return "unknown";
}

ConvergenceFailure::ConvergenceFailure(SolveReport last, std::vector<double> last_probs)
    : Error(ErrorKind::convergence_failure,
            "dual ascent did not converge in " + std::to_string(last.iterations) + " iterations"),
      report_(std::move(last)),
      last_probs_(std::move(last_probs)) {}

ConstraintSpec constraint_levels(const AlignmentInstance& inst, double beta) {
  const ClosedFormResult rlhf = rlhf_optimal(inst, beta);
  return {rlhf.expected_reward, rlhf.kl_to_ref};
}

namespace {

void require_tolerance(double tol) {
  if (!(tol > 0.0) || !std::isfinite(tol)) throw InvalidArgument("tolerance must be > 0");
}

// pi_lambda ∝ base * exp(lambda * r) over the candidates where base > 0.
class RewardTilt {
 public:
  RewardTilt(const AlignmentInstance& inst, std::vector<double> base_log)
      : inst_(inst), base_log_(std::move(base_log)) {
    for (std::size_t i = 0; i < inst.size(); ++i) {
      if (std::isfinite(base_log_[i])) {
        max_reward_ = std::max(max_reward_, inst.rewards()[i]);
      }
    }
  }

  double max_reward() const { return max_reward_; }

  ClosedFormResult policy(double lambda) const {
    std::vector<double> scores;
    std::vector<std::size_t> excluded;
    for (std::size_t i = 0; i < inst_.size(); ++i) {
      if (std::isfinite(base_log_[i])) {
        scores.push_back(base_log_[i] + lambda * inst_.rewards()[i]);
      } else {
        excluded.push_back(i);
      }
    }
    const double log_z = log_sum_exp(scores);
    std::vector<double> probs(inst_.size(), 0.0);
    for (std::size_t i = 0, k = 0; i < inst_.size(); ++i) {
      if (std::isfinite(base_log_[i])) probs[i] = std::exp(scores[k++] - log_z);
    }
    return describe_policy(inst_, std::move(probs), log_z, std::move(excluded));
  }

  // Base measure renormalized over the reward-maximizing candidates.
  ClosedFormResult argmax_policy() const {
    std::vector<double> scores;
    std::vector<std::size_t> members;
    std::vector<std::size_t> excluded;
    for (std::size_t i = 0; i < inst_.size(); ++i) {
      if (std::isfinite(base_log_[i]) && inst_.rewards()[i] == max_reward_) {
        scores.push_back(base_log_[i]);
        members.push_back(i);
      } else {
        excluded.push_back(i);
      }
    }
    const double log_z = log_sum_exp(scores);
    std::vector<double> probs(inst_.size(), 0.0);
    for (std::size_t k = 0; k < members.size(); ++k) {
      probs[members[k]] = std::exp(scores[k] - log_z);
    }
    return describe_policy(inst_, std::move(probs), log_z, std::move(excluded));
  }

 private:
  const AlignmentInstance& inst_;
  std::vector<double> base_log_;
  double max_reward_ = -std::numeric_limits<double>::infinity();
};

MultiplierSolution solve_tilt(const RewardTilt& tilt, double reward_floor, double tol) {
  require_tolerance(tol);
  MultiplierSolution out;
  SolveReport& report = out.report;

  if (reward_floor > tilt.max_reward() + tol) {
    report.status = report.reward_status = SolveStatus::infeasible;
    report.multipliers = {std::numeric_limits<double>::quiet_NaN()};
    report.reward_residual = tilt.max_reward() - reward_floor;
    return out;
  }

  auto finish = [&](ClosedFormResult policy, double lambda, SolveStatus status) {
    report.multipliers = {lambda};
    report.status = report.reward_status = status;
    report.reward_residual = policy.expected_reward - reward_floor;
    out.policy = std::move(policy);
    return out;
  };

  ClosedFormResult at_zero = tilt.policy(0.0);
  if (at_zero.expected_reward >= reward_floor) {
    return finish(std::move(at_zero), 0.0, SolveStatus::slack);
  }
  if (reward_floor >= tilt.max_reward() - tol) {
    // Only the argmax set reaches R; the tilt would need an infinite multiplier.
    ClosedFormResult tie = tilt.argmax_policy();
    return finish(std::move(tie), std::numeric_limits<double>::infinity(), SolveStatus::binding);
  }

  double lo = 0.0;
  double hi = 1.0;
  ClosedFormResult at_hi = tilt.policy(hi);
  ++report.iterations;
  while (at_hi.expected_reward < reward_floor - tol) {
    lo = hi;
    hi *= 2.0;
    if (hi > kMaxBisectionMultiplier) {
      return finish(std::move(at_hi), lo, SolveStatus::saturated);
    }
    at_hi = tilt.policy(hi);
    ++report.iterations;
  }
  if (std::abs(at_hi.expected_reward - reward_floor) <= tol) {
    return finish(std::move(at_hi), hi, SolveStatus::binding);
  }

  for (;;) {
    const double mid = 0.5 * (lo + hi);
    ClosedFormResult at_mid = tilt.policy(mid);
    ++report.iterations;
    const double gap = at_mid.expected_reward - reward_floor;
    if (std::abs(gap) <= tol || mid <= lo || mid >= hi) {
      return finish(std::move(at_mid), mid, SolveStatus::binding);
    }
    (gap < 0.0 ? lo : hi) = mid;
  }
}

// The QEMPO-KL program restricted to the support of pi_ref.
struct KlProgram {
  std::vector<std::size_t> support;
  std::vector<double> rewards;
  std::vector<double> ref_log;

  explicit KlProgram(const AlignmentInstance& inst) {
    for (std::size_t i = 0; i < inst.size(); ++i) {
      if (inst.ref_probs()[i] > 0.0) {
        support.push_back(i);
        rewards.push_back(inst.rewards()[i]);
        ref_log.push_back(std::log(inst.ref_probs()[i]));
      }
    }
  }

  std::vector<double> scores(double lambda1, double lambda2) const {
    std::vector<double> s(support.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k] = (lambda1 * rewards[k] + lambda2 * ref_log[k]) / (1.0 + lambda2);
    }
    return s;
  }

  double max_reward() const { return *std::max_element(rewards.begin(), rewards.end()); }

  // Hessian of the convex dual g = (1 + l2) ln Z - l1 R + l2 K. With
  // s = scores and u = (ln pi_ref - s) / (1 + l2):
  //   g11 = Var(r) / (1 + l2), g12 = Cov(r, u), g22 = (1 + l2) Var(u).
  std::array<double, 3> dual_hessian(double lambda1, double lambda2) const {
    const std::vector<double> s = scores(lambda1, lambda2);
    const double log_z = log_sum_exp(s);
    const double scale = 1.0 + lambda2;
    double mr = 0.0, mu = 0.0;
    std::vector<double> p(s.size()), u(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      p[k] = std::exp(s[k] - log_z);
      u[k] = (ref_log[k] - s[k]) / scale;
      mr += p[k] * rewards[k];
      mu += p[k] * u[k];
    }
    double vr = 0.0, vu = 0.0, c = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      vr += p[k] * (rewards[k] - mr) * (rewards[k] - mr);
      vu += p[k] * (u[k] - mu) * (u[k] - mu);
      c += p[k] * (rewards[k] - mr) * (u[k] - mu);
    }
    return {vr / scale, c, scale * vu};
  }
};

// Newton step for the dual restricted to the multipliers that are positive
// or pushed upward by their violation. Empty when the system is singular.
std::optional<std::array<double, 2>> newton_step(const KlProgram& program, double l1, double l2,
                                                 double v1, double v2) {
  const auto [h11, h12, h22] = program.dual_hessian(l1, l2);
  const bool free1 = l1 > 0.0 || v1 > 0.0;
  const bool free2 = l2 > 0.0 || v2 > 0.0;
  constexpr double kTiny = 1e-300;
  if (free1 && free2) {
    const double det = h11 * h22 - h12 * h12;
    if (!(det > kTiny * std::max(1.0, h11 * h22))) return std::nullopt;
    return std::array<double, 2>{(h22 * v1 - h12 * v2) / det, (h11 * v2 - h12 * v1) / det};
  }
  if (free1) {
    if (!(h11 > kTiny)) return std::nullopt;
    return std::array<double, 2>{v1 / h11, 0.0};
  }
  if (free2) {
    if (!(h22 > kTiny)) return std::nullopt;
    return std::array<double, 2>{0.0, v2 / h22};
  }
  return std::nullopt;
}

}  // namespace

MultiplierSolution solve_qempo_multiplier(const AlignmentInstance& inst, double reward_floor,
                                          double tol) {
  const RewardTilt tilt(inst, std::vector<double>(inst.size(), 0.0));
  return solve_tilt(tilt, reward_floor, tol);
}

MultiplierSolution solve_min_kl_multiplier(const AlignmentInstance& inst, double reward_floor,
                                           double tol) {
  std::vector<double> base(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const double q = inst.ref_probs()[i];
    base[i] = q > 0.0 ? std::log(q) : -std::numeric_limits<double>::infinity();
  }
  const RewardTilt tilt(inst, std::move(base));
  return solve_tilt(tilt, reward_floor, tol);
}

ClosedFormResult qempo_kl_lagrangian_policy(const AlignmentInstance& inst, double lambda1,
                                            double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) ||
      !std::isfinite(lambda2)) {
    throw InvalidArgument("Lagrange multipliers must be finite and >= 0");
  }
  const KlProgram program(inst);
  const std::vector<double> scores = program.scores(lambda1, lambda2);
  const double log_z = log_sum_exp(scores);
  std::vector<double> probs(inst.size(), 0.0);
  std::vector<std::size_t> excluded;
  for (std::size_t k = 0; k < program.support.size(); ++k) {
    probs[program.support[k]] = std::exp(scores[k] - log_z);
  }
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.ref_probs()[i] <= 0.0) excluded.push_back(i);
  }
  return describe_policy(inst, std::move(probs), log_z, std::move(excluded));
}

double qempo_kl_dual(const AlignmentInstance& inst, const ConstraintSpec& spec, double lambda1,
                     double lambda2) {
  if (!spec.kl_budget) throw InvalidArgument("QEMPO-KL dual needs a KL budget");
  const KlProgram program(inst);
  const double log_z = log_sum_exp(program.scores(lambda1, lambda2));
  return -(1.0 + lambda2) * log_z + lambda1 * spec.reward_floor - lambda2 * *spec.kl_budget;
}

MultiplierSolution solve_qempo_kl_multipliers(const AlignmentInstance& inst,
                                              const ConstraintSpec& spec,
                                              const DualAscentOptions& options) {
  require_tolerance(options.tol);
  if (!spec.kl_budget) throw InvalidArgument("QEMPO-KL solve needs a KL budget");
  if (*spec.kl_budget < 0.0) throw InvalidArgument("KL budget must be >= 0");
  if (!(options.initial_step > 0.0)) throw InvalidArgument("dual step must be > 0");
  const double tol = options.tol;
  const double budget = *spec.kl_budget;
  const KlProgram program(inst);

  MultiplierSolution out;
  SolveReport& report = out.report;
  if (spec.reward_floor > program.max_reward() + tol) {
    report.status = report.reward_status = SolveStatus::infeasible;
    report.kl_status = SolveStatus::infeasible;
    report.multipliers = {std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()};
    report.reward_residual = program.max_reward() - spec.reward_floor;
    return out;
  }

  double l1 = 0.0;
  double l2 = 0.0;
  double step = options.initial_step;
  double dual = qempo_kl_dual(inst, spec, l1, l2);
  report.dual_trace.push_back(dual);

  auto classify = [tol](double multiplier, double violation) {
    // violation > 0 means the constraint is violated.
    if (violation > tol) return std::optional<SolveStatus>{};
    if (multiplier <= tol) return std::optional<SolveStatus>{SolveStatus::slack};
    if (std::abs(violation) <= tol) return std::optional<SolveStatus>{SolveStatus::binding};
    return std::optional<SolveStatus>{};
  };

  for (std::size_t iter = 0;; ++iter) {
    ClosedFormResult policy = qempo_kl_lagrangian_policy(inst, l1, l2);
    const double reward_violation = spec.reward_floor - policy.expected_reward;
    const double kl_violation = policy.kl_to_ref - budget;
    report.multipliers = {l1, l2};
    report.reward_residual = policy.expected_reward - spec.reward_floor;
    report.kl_residual = policy.kl_to_ref - budget;
    report.iterations = iter;

    const auto reward_state = classify(l1, reward_violation);
    const auto kl_state = classify(l2, kl_violation);
    if (reward_state && kl_state) {
      report.reward_status = *reward_state;
      report.kl_status = *kl_state;
      report.status = (*reward_state == SolveStatus::binding || *kl_state == SolveStatus::binding)
                          ? SolveStatus::binding
                          : SolveStatus::slack;
      out.policy = std::move(policy);
      return out;
    }
    if (iter >= options.max_iters) {
      throw ConvergenceFailure(report, policy.dist.probs());
    }

    // Try a projected Newton step first; keep it only if the dual does not
    // go down. Otherwise fall back to projected gradient ascent, where the
    // gradient of the dual is the constraint violation.
    if (const auto delta = newton_step(program, l1, l2, reward_violation, kl_violation)) {
      const double next1 = std::max(0.0, l1 + (*delta)[0]);
      const double next2 = std::max(0.0, l2 + (*delta)[1]);
      if (std::isfinite(next1) && std::isfinite(next2)) {
        const double next_dual = qempo_kl_dual(inst, spec, next1, next2);
        if (std::isfinite(next_dual) &&
            next_dual >= dual - 1e-12 * std::max(1.0, std::abs(dual))) {
          l1 = next1;
          l2 = next2;
          dual = next_dual;
          report.dual_trace.push_back(dual);
          continue;
        }
      }
    }
    for (;;) {
      const double next1 = std::max(0.0, l1 + step * reward_violation);
      const double next2 = std::max(0.0, l2 + step * kl_violation);
      const double next_dual = qempo_kl_dual(inst, spec, next1, next2);
      if (next_dual >= dual - 1e-12 * std::max(1.0, std::abs(dual))) {
        l1 = next1;
        l2 = next2;
        dual = next_dual;
        report.dual_trace.push_back(dual);
        break;
      }
      step *= 0.5;
      if (step < 1e-300) {
        throw ConvergenceFailure(report, policy.dist.probs());
      }
    }
  }
}

KktReport verify_kkt(const AlignmentInstance& inst, std::span<const double> dist, Program program,
                     const ConstraintSpec& spec, std::span<const double> multipliers, double tol) {
  KktReport out;
  const bool two_constraints = program == Program::max_entropy_kl;
  const std::size_t expected = two_constraints ? 2 : 1;
  if (multipliers.size() != expected) {
    out.detail = "expected " + std::to_string(expected) + " multipliers";
    return out;
  }
  if (two_constraints && !spec.kl_budget) {
    out.detail = "program needs a KL budget";
    return out;
  }
  if (dist.size() != inst.size()) {
    out.detail = "distribution length mismatch";
    return out;
  }
  validate_distribution(dist);

  out.dual_feasibility = std::all_of(multipliers.begin(), multipliers.end(),
                                     [](double m) { return m >= 0.0 && std::isfinite(m); });

  // Primal feasibility.
  out.reward_residual = expected_reward(dist, inst) - spec.reward_floor;
  bool primal = out.reward_residual >= -tol;
  double kl = 0.0;
  bool kl_defined = true;
  if (two_constraints || program == Program::min_kl) {
    try {
      kl = kl_divergence(dist, inst.ref_probs());
    } catch (const SupportMismatch&) {
      kl_defined = false;
    }
  }
  if (two_constraints) {
    out.kl_residual = kl_defined ? kl - *spec.kl_budget : std::numeric_limits<double>::infinity();
    primal = primal && *out.kl_residual <= tol;
  }
  out.primal_feasibility = primal;

  // Complementary slackness: each multiplier is ~0 or its constraint binds.
  auto slack_ok = [tol](double multiplier, double residual) {
    return std::abs(multiplier) <= tol || std::abs(residual) <= tol;
  };
  out.complementary_slackness = slack_ok(multipliers[0], out.reward_residual);
  if (two_constraints) {
    out.complementary_slackness =
        out.complementary_slackness && slack_ok(multipliers[1], *out.kl_residual);
  }

  // Stationarity: the gradient of the Lagrangian in pi must be constant across
  // candidates (the constant is the simplex multiplier).
  std::vector<double> gradient;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (dist[i] <= 0.0) {
      out.detail = "stationarity needs a strictly positive distribution";
      out.stationarity_residual = std::numeric_limits<double>::infinity();
      return out;
    }
    const double log_p = std::log(dist[i]);
    const double r = inst.rewards()[i];
    const double q = inst.ref_probs()[i];
    const bool needs_ref = program != Program::max_entropy;
    if (needs_ref && q <= 0.0) {
      out.detail = "stationarity needs pi_ref > 0 everywhere";
      out.stationarity_residual = std::numeric_limits<double>::infinity();
      return out;
    }
    switch (program) {
      case Program::min_kl:
        gradient.push_back(log_p - std::log(q) - multipliers[0] * r);
        break;
      case Program::max_entropy:
        gradient.push_back(log_p - multipliers[0] * r);
        break;
      case Program::max_entropy_kl:
        gradient.push_back((1.0 + multipliers[1]) * log_p - multipliers[0] * r -
                           multipliers[1] * std::log(q));
        break;
    }
  }
  const std::vector<double> centered = mean_centered(gradient);
  double worst = 0.0;
  for (double v : centered) worst = std::max(worst, std::abs(v));
  out.stationarity_residual = worst;
  out.stationarity = std::isfinite(worst) && worst <= tol;
  return out;
}

}  // namespace qempo

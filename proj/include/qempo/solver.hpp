#pragma once

// Turns the constrained programs into concrete multipliers.
//
//   min KL(pi || pi_ref)  s.t. E_pi[r] >= R                 (reference tilt)
//   max H(pi)             s.t. E_pi[r] >= R                 (QEMPO)
//   max H(pi)             s.t. E_pi[r] >= R, KL <= K        (QEMPO-KL)
//
// Single-constraint programs are solved by bisection on the multiplier, using
// that E[r] is nondecreasing along the exponential tilt. The two-constraint
// program is solved by projected ascent on its concave dual.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qempo/closed_form.hpp"
#include "qempo/errors.hpp"
#include "qempo/instance.hpp"

namespace qempo {

inline constexpr double kDefaultSolverTolerance = 1e-8;
inline constexpr std::size_t kDefaultDualIterations = 10000;
inline constexpr double kDefaultDualStep = 0.5;
// Bisection gives up doubling its upper bracket beyond this multiplier.
inline constexpr double kMaxBisectionMultiplier = 1e6;

struct ConstraintSpec {
  double reward_floor = 0.0;            // R
  std::optional<double> kl_budget;      // K
};

enum class SolveStatus { slack, binding, infeasible, saturated };

const char* to_string(SolveStatus status);

struct SolveReport {
  std::vector<double> multipliers;          // {lambda} or {lambda1, lambda2}
  double reward_residual = 0.0;             // E_pi[r] - R
  std::optional<double> kl_residual;        // KL(pi || pi_ref) - K
  std::size_t iterations = 0;
  SolveStatus status = SolveStatus::slack;  // overall
  SolveStatus reward_status = SolveStatus::slack;
  std::optional<SolveStatus> kl_status;
  // Dual objective after each accepted ascent step (two-constraint solve only).
  std::vector<double> dual_trace;
};

struct MultiplierSolution {
  SolveReport report;
  // Absent when the program is infeasible.
  std::optional<ClosedFormResult> policy;
};

// Raised when dual ascent runs out of iterations. Carries the last iterate.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(SolveReport last, std::vector<double> last_probs);
  const SolveReport& report() const noexcept { return report_; }
  const std::vector<double>& last_probs() const noexcept { return last_probs_; }

 private:
  SolveReport report_;
  std::vector<double> last_probs_;
};

// R = E_{pi_RLHF}[r] and K = KL(pi_RLHF || pi_ref) for the RLHF policy at beta.
ConstraintSpec constraint_levels(const AlignmentInstance& inst, double beta);

// QEMPO multiplier: lambda = 0 (slack) when the uniform policy already meets R.
// R within tol of max r returns the uniform policy over the argmax set with an
// infinite multiplier.
MultiplierSolution solve_qempo_multiplier(const AlignmentInstance& inst, double reward_floor,
                                          double tol = kDefaultSolverTolerance);

// Same bisection for the KL-minimization program; the base measure is pi_ref.
MultiplierSolution solve_min_kl_multiplier(const AlignmentInstance& inst, double reward_floor,
                                           double tol = kDefaultSolverTolerance);

struct DualAscentOptions {
  double tol = kDefaultSolverTolerance;
  std::size_t max_iters = kDefaultDualIterations;
  double initial_step = kDefaultDualStep;
};

// QEMPO-KL multipliers (lambda1, lambda2) >= 0. Infeasible levels are reported
// through the status; exhausting max_iters throws ConvergenceFailure.
MultiplierSolution solve_qempo_kl_multipliers(const AlignmentInstance& inst,
                                              const ConstraintSpec& spec,
                                              const DualAscentOptions& options = {});

// Dual function of the QEMPO-KL program at (lambda1, lambda2) >= 0.
double qempo_kl_dual(const AlignmentInstance& inst, const ConstraintSpec& spec, double lambda1,
                     double lambda2);

// Primal minimizer of the QEMPO-KL Lagrangian; unlike qempo_kl_optimal this
// accepts zero multipliers. Support is restricted to pi_ref > 0.
ClosedFormResult qempo_kl_lagrangian_policy(const AlignmentInstance& inst, double lambda1,
                                            double lambda2);

enum class Program { min_kl, max_entropy, max_entropy_kl };

struct KktReport {
  bool stationarity = false;
  bool primal_feasibility = false;
  bool dual_feasibility = false;
  bool complementary_slackness = false;
  double stationarity_residual = 0.0;  // max deviation of the Lagrangian gradient from a constant
  double reward_residual = 0.0;
  std::optional<double> kl_residual;
  std::string detail;

  bool passed() const {
    return stationarity && primal_feasibility && dual_feasibility && complementary_slackness;
  }
};

// Checks the four KKT conditions of `program` at `dist` with the given
// multipliers ({lambda} or {lambda1, lambda2}).
KktReport verify_kkt(const AlignmentInstance& inst, std::span<const double> dist, Program program,
                     const ConstraintSpec& spec, std::span<const double> multipliers,
                     double tol = kDefaultSolverTolerance);

}  // namespace qempo

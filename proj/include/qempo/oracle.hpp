#pragma once

// Brute-force certification: exhaustive scans over a regular grid on the
// probability simplex, and central finite differences for gradient checks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "qempo/instance.hpp"

namespace qempo {

// Enumeration is capped to keep scans tractable.
inline constexpr std::size_t kMaxGridDimension = 5;
inline constexpr double kMinGridStep = 0.005;

// All probability vectors of dimension n whose entries are multiples of h.
class SimplexGrid {
 public:
  // h must divide 1 (within 1e-9). Throws ResourceLimit outside the caps.
  SimplexGrid(std::size_t dimension, double step);

  std::size_t dimension() const noexcept { return dimension_; }
  double step() const noexcept { return step_; }
  std::size_t divisions() const noexcept { return divisions_; }

  // C(1/h + n - 1, n - 1).
  std::uint64_t expected_count() const;

  // Visits every grid point in lexicographic order of its integer counts.
  void for_each(const std::function<void(std::span<const double>)>& visit) const;

 private:
  std::size_t dimension_;
  double step_;
  std::size_t divisions_;
};

struct GridOptimum {
  std::optional<std::vector<double>> best;  // empty when nothing is feasible
  double value = 0.0;
  std::uint64_t visited = 0;
  std::uint64_t feasible = 0;
};

// Smallest KL(pi || pi_ref) over grid points with E[r] >= R.
GridOptimum brute_force_min_kl(const AlignmentInstance& inst, double reward_floor,
                               const SimplexGrid& grid);

// Largest entropy over grid points with E[r] >= R and, if given, KL <= K.
GridOptimum brute_force_max_entropy(const AlignmentInstance& inst, double reward_floor,
                                    std::optional<double> kl_budget, const SimplexGrid& grid);

// Slack allowed between an analytical optimum and the best grid point.
// Entropy: (ln n) * h * n.
double entropy_grid_gap(std::size_t dimension, double step);
// KL: h * n * (1 + max_i |ln(p_i / q_i)|), a first-order bound around the
// analytical optimum p.
double kl_grid_gap(std::span<const double> optimum, std::span<const double> ref, double step);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> theta,
                                         double h = 1e-6);

// ||a - b||_inf / max(||a||_inf, ||b||_inf, floor).
double relative_gradient_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor = 1e-12);

}  // namespace qempo

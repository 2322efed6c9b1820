#include "qempo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qempo/errors.hpp"

namespace qempo {

SimplexGrid::SimplexGrid(std::size_t dimension, double step) : dimension_(dimension), step_(step) {
  if (dimension < 1) throw InvalidArgument("grid dimension must be >= 1");
  if (!(step > 0.0) || step > 1.0) throw InvalidArgument("grid step must lie in (0, 1]");
  if (dimension > kMaxGridDimension || step < kMinGridStep) {
    throw ResourceLimit("simplex grid limited to n <= " + std::to_string(kMaxGridDimension) +
                        " and h >= " + std::to_string(kMinGridStep));
  }
  const double divisions = 1.0 / step;
  divisions_ = static_cast<std::size_t>(std::llround(divisions));
  if (std::abs(divisions - static_cast<double>(divisions_)) > 1e-9 * divisions) {
    throw InvalidArgument("grid step must divide 1");
  }
}

std::uint64_t SimplexGrid::expected_count() const {
  // C(N + n - 1, n - 1), built incrementally to stay exact.
  std::uint64_t count = 1;
  const std::uint64_t top = divisions_ + dimension_ - 1;
  const std::uint64_t k = dimension_ - 1;
  for (std::uint64_t i = 1; i <= k; ++i) count = count * (top - k + i) / i;
  return count;
}

void SimplexGrid::for_each(const std::function<void(std::span<const double>)>& visit) const {
  const std::size_t n = dimension_;
  const double h = 1.0 / static_cast<double>(divisions_);
  std::vector<std::size_t> counts(n, 0);
  std::vector<double> point(n, 0.0);
  counts[n - 1] = divisions_;

  // Odometer over the first n-1 counts; the last coordinate takes the rest.
  for (;;) {
    std::size_t used = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) used += counts[i];
    for (std::size_t i = 0; i + 1 < n; ++i) point[i] = static_cast<double>(counts[i]) * h;
    point[n - 1] = static_cast<double>(divisions_ - used) * h;
    visit(point);

    if (n == 1) return;
    std::size_t pos = n - 2;
    for (;;) {
      if (used < divisions_) {
        ++counts[pos];
        break;
      }
      used -= counts[pos];
      counts[pos] = 0;
      if (pos == 0) return;
      --pos;
    }
  }
}

namespace {

bool lexicographically_less(std::span<const double> a, const std::vector<double>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// KL without validation; grid points are valid by construction.
double raw_kl(std::span<const double> p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double raw_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double raw_reward(std::span<const double> p, const std::vector<double>& r) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] * r[i];
  return total;
}

// Slack on the reward comparison to absorb roundoff in grid sums.
constexpr double kFeasibilitySlack = 1e-12;

}  // namespace

GridOptimum brute_force_min_kl(const AlignmentInstance& inst, double reward_floor,
                               const SimplexGrid& grid) {
  if (grid.dimension() != inst.size()) throw InvalidArgument("grid dimension mismatch");
  GridOptimum out;
  out.value = std::numeric_limits<double>::infinity();
  const auto& r = inst.rewards();
  const auto& q = inst.ref_probs();
  grid.for_each([&](std::span<const double> p) {
    ++out.visited;
    if (raw_reward(p, r) < reward_floor - kFeasibilitySlack) return;
    const double kl = raw_kl(p, q);
    if (!std::isfinite(kl)) return;
    ++out.feasible;
    if (!out.best || kl < out.value || (kl == out.value && lexicographically_less(p, *out.best))) {
      out.value = kl;
      out.best = std::vector<double>(p.begin(), p.end());
    }
  });
  return out;
}

GridOptimum brute_force_max_entropy(const AlignmentInstance& inst, double reward_floor,
                                    std::optional<double> kl_budget, const SimplexGrid& grid) {
  if (grid.dimension() != inst.size()) throw InvalidArgument("grid dimension mismatch");
  GridOptimum out;
  out.value = -std::numeric_limits<double>::infinity();
  const auto& r = inst.rewards();
  const auto& q = inst.ref_probs();
  grid.for_each([&](std::span<const double> p) {
    ++out.visited;
    if (raw_reward(p, r) < reward_floor - kFeasibilitySlack) return;
    if (kl_budget && raw_kl(p, q) > *kl_budget + kFeasibilitySlack) return;
    ++out.feasible;
    const double h = raw_entropy(p);
    if (!out.best || h > out.value || (h == out.value && lexicographically_less(p, *out.best))) {
      out.value = h;
      out.best = std::vector<double>(p.begin(), p.end());
    }
  });
  return out;
}

double entropy_grid_gap(std::size_t dimension, double step) {
  const double n = static_cast<double>(dimension);
  return std::log(n) * step * n;
}

double kl_grid_gap(std::span<const double> optimum, std::span<const double> ref, double step) {
  if (optimum.size() != ref.size()) throw InvalidArgument("kl_grid_gap: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < optimum.size(); ++i) {
    if (optimum[i] > 0.0 && ref[i] > 0.0) {
      worst = std::max(worst, std::abs(std::log(optimum[i] / ref[i])));
    }
  }
  return step * static_cast<double>(optimum.size()) * (1.0 + worst);
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> theta,
                                         double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("finite-difference step must be > 0");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw EvaluationFailure("function is not finite near coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_gradient_error(std::span<const double> analytic, std::span<const double> numeric,
                               double floor) {
  if (analytic.size() != numeric.size()) throw InvalidArgument("gradient length mismatch");
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

}  // namespace qempo

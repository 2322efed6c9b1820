#pragma once

// Random instance and policy generators shared by unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qempo/instance.hpp"
#include "qempo/online.hpp"
#include "qempo/rng.hpp"

namespace qempo::testing {

inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(uniform_in(rng, std::log(lo), std::log(hi)));
}

// Strictly positive distribution with every entry at least floor.
inline std::vector<double> random_simplex(Rng& rng, std::size_t n, double floor = 0.0) {
  std::vector<double> w(n);
  double total = 0.0;
  for (double& v : w) {
    v = -std::log(1.0 - rng.uniform());  // exponential weights give a flat Dirichlet
    total += v;
  }
  const double scale = 1.0 - floor * static_cast<double>(n);
  for (double& v : w) v = floor + scale * v / total;
  return w;
}

struct InstanceShape {
  std::size_t min_size = 3;
  std::size_t max_size = 6;
  double ref_floor = 0.0;
  bool binary_rewards = false;
};

// At least one positive and one negative candidate. Positives get the
// larger rewards unless binary_rewards, in which case rewards are 1/0.
inline AlignmentInstance random_instance(Rng& rng, const InstanceShape& shape,
                                         const std::string& id = "rand") {
  const std::size_t n = shape.min_size + rng.below(shape.max_size - shape.min_size + 1);
  std::vector<bool> positive(n);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    positive[i] = rng.bernoulli(0.5);
    pos += positive[i];
  }
  if (pos == 0) positive[0] = true;
  if (pos == n) positive[n - 1] = false;
  std::vector<double> rewards(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (shape.binary_rewards) {
      rewards[i] = positive[i] ? 1.0 : 0.0;
    } else {
      rewards[i] = positive[i] ? uniform_in(rng, 0.5, 2.0) : uniform_in(rng, -1.0, 0.5);
    }
  }
  return AlignmentInstance::from_vectors(id, std::move(rewards),
                                         random_simplex(rng, n, shape.ref_floor),
                                         std::move(positive));
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform_in(rng, lo, hi);
  return v;
}

// Group of size g with rewards in {0, 1} and arbitrary log-probabilities.
inline GroupSample random_group(Rng& rng, std::size_t g) {
  GroupSample group;
  for (std::size_t i = 0; i < g; ++i) {
    group.indices.push_back(i);
    group.rewards.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    group.log_probs.push_back(uniform_in(rng, -4.0, -0.1));
    group.ref_log_probs.push_back(uniform_in(rng, -4.0, -0.1));
  }
  return group;
}

}  // namespace qempo::testing

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qempo/closed_form.hpp"
#include "qempo/instance.hpp"

namespace qempo {

struct PassAtKInput {
  std::size_t n = 0;  // samples drawn
  std::size_t c = 0;  // correct among them
  std::size_t k = 0;  // target
};

// Unbiased estimator 1 - C(n-c, k) / C(n, k), evaluated as a product of
// (1 - k/i) terms in log space. Requires c <= n and 1 <= k <= n.
double pass_at_k(const PassAtKInput& input);

struct FrontierPoint {
  MethodParams params;
  std::string instance_id;
  double entropy = 0.0;
  double expected_reward = 0.0;
  double quality_mass = 0.0;
};

// Closed-form policy at every grid point, in grid order.
std::vector<FrontierPoint> frontier_sweep(const AlignmentInstance& inst,
                                          const std::vector<MethodParams>& grid);

// QEMPO grid from a list of lambdas.
std::vector<MethodParams> qempo_grid(const std::vector<double>& lambdas);

// Offline hyperparameter presets: 1/lambda in {1e-2, 6e-3, 4e-3, 2e-3, 1e-3}
// and (1/l1, l2/l1) in {(4e-3,1e-2), (2e-3,1e-2), (4e-3,6e-3), (4e-3,1.2e-2),
// (6e-3,1e-2)}.
std::vector<MethodParams> offline_qempo_preset();
std::vector<MethodParams> offline_qempo_kl_preset();

// Header: method,instance,beta,lambda,lambda1,lambda2,entropy,expected_reward,quality_mass.
// Multipliers the method does not use are left empty.
std::string frontier_csv(const std::vector<FrontierPoint>& points);

}  // namespace qempo

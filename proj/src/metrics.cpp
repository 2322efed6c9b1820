#include "qempo/metrics.hpp"

#include <cmath>

#include "qempo/errors.hpp"
#include "qempo/format.hpp"

namespace qempo {

double pass_at_k(const PassAtKInput& input) {
  const auto [n, c, k] = input;
  if (c > n) throw InvalidArgument("pass@k: correct count exceeds samples");
  if (k < 1 || k > n) throw InvalidArgument("pass@k: k must lie in [1, n]");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k/i)
  double log_ratio = 0.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) {
    log_ratio += std::log1p(-static_cast<double>(k) / static_cast<double>(i));
  }
  return 1.0 - std::exp(log_ratio);
}

std::vector<FrontierPoint> frontier_sweep(const AlignmentInstance& inst,
                                          const std::vector<MethodParams>& grid) {
  if (grid.empty()) throw InvalidArgument("frontier grid is empty");
  std::vector<FrontierPoint> out;
  out.reserve(grid.size());
  for (const auto& params : grid) {
    const ClosedFormResult result = closed_form_policy(inst, params);
    out.push_back({params, inst.id(), result.entropy, result.expected_reward,
                   quality_mass(result.dist.probs(), inst)});
  }
  return out;
}

std::vector<MethodParams> qempo_grid(const std::vector<double>& lambdas) {
  std::vector<MethodParams> grid;
  for (double l : lambdas) grid.push_back(MethodParams::qempo(l));
  return grid;
}

std::vector<MethodParams> offline_qempo_preset() {
  std::vector<MethodParams> grid;
  for (double inv : {1e-2, 6e-3, 4e-3, 2e-3, 1e-3}) grid.push_back(MethodParams::qempo(1.0 / inv));
  return grid;
}

std::vector<MethodParams> offline_qempo_kl_preset() {
  std::vector<MethodParams> grid;
  const double settings[][2] = {
      {4e-3, 1e-2}, {2e-3, 1e-2}, {4e-3, 6e-3}, {4e-3, 1.2e-2}, {6e-3, 1e-2}};
  for (const auto& s : settings) grid.push_back(MethodParams::qempo_kl_inverse(s[0], s[1]));
  return grid;
}

std::string frontier_csv(const std::vector<FrontierPoint>& points) {
  std::string out =
      "method,instance,beta,lambda,lambda1,lambda2,entropy,expected_reward,quality_mass\n";
  for (const auto& p : points) {
    const auto& m = p.params;
    out += std::string(to_string(m.method)) + "," + p.instance_id + ",";
    out += (m.method == Method::rlhf ? format_double(m.beta) : "") + ",";
    out += (m.method == Method::qempo ? format_double(m.lambda) : "") + ",";
    out += (m.method == Method::qempo_kl ? format_double(m.lambda1) : "") + ",";
    out += (m.method == Method::qempo_kl ? format_double(m.lambda2) : "") + ",";
    out += format_double(p.entropy) + "," + format_double(p.expected_reward) + "," +
           format_double(p.quality_mass) + "\n";
  }
  return out;
}

}  // namespace qempo

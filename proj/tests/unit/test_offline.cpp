#include <cmath>

#include "doctest.h"
#include "qempo/errors.hpp"
#include "qempo/offline.hpp"
#include "qempo/oracle.hpp"
#include "support/random_instances.hpp"

using namespace qempo;
using doctest::Approx;

namespace {

ScenarioSuite three_way() {
  return ScenarioSuite({AlignmentInstance::from_vectors("t", {1, 0, 0.5}, {0.5, 0.3, 0.2},
                                                        {true, false, true})},
                       0);
}

LogitPolicy fixed_policy() { return LogitPolicy({"t"}, {{0.3, -0.2, 0.1}}); }

const std::vector<PreferencePair> kPairs = {{0, 0, 1}, {0, 2, 1}, {0, 0, 2}};

// Flattens the single-instance policy for finite differences.
ScalarFunction loss_of_logits(const OfflineConfig& config, const ScenarioSuite& suite) {
  return [config, &suite](std::span<const double> theta) {
    const LogitPolicy p({"t"}, {std::vector<double>(theta.begin(), theta.end())});
    return offline_loss(config, p, suite, kPairs);
  };
}

}  // namespace

TEST_SUITE("offline") {

TEST_CASE("pairwise losses against frozen values") {
  const auto suite = three_way();
  const auto policy = fixed_policy();
  CHECK(dpo_loss(policy, suite, kPairs, 0.5) == Approx(0.70542637685683133).epsilon(1e-14));
  CHECK(qempo_offline_loss(policy, kPairs, 0.25) == Approx(0.65246960805241684).epsilon(1e-14));
  CHECK(qempo_kl_offline_loss(policy, suite, kPairs, 0.25, 0.4) ==
        Approx(0.66114358814103168).epsilon(1e-14));
}

TEST_CASE("qempo-kl margin coefficients") {
  OfflineConfig c;
  c.method = OfflineMethod::qempo_kl;
  c.inv_lambda1 = 4e-3;
  c.ratio21 = 1e-2;
  const auto m = margin_coefficients(c);
  CHECK(m.policy == Approx(1.4e-2));
  CHECK(m.reference == Approx(1e-2));
}

TEST_CASE("analytic gradients match finite differences") {
  const auto suite = three_way();
  const auto policy = fixed_policy();
  for (auto method : {OfflineMethod::dpo, OfflineMethod::qempo, OfflineMethod::qempo_kl}) {
    OfflineConfig config;
    config.method = method;
    config.beta = 0.5;
    config.inv_lambda = 0.25;
    config.inv_lambda1 = 0.25;
    config.ratio21 = 0.4;
    const auto analytic = offline_gradient(config, policy, suite, kPairs);
    const auto numeric = finite_diff_gradient(loss_of_logits(config, suite), policy.logits(0));
    CHECK(relative_gradient_error(analytic[0], numeric) < 1e-6);
  }
}

TEST_CASE("preference sampling follows Bradley-Terry") {
  const auto inst = AlignmentInstance::from_vectors("t", {2, 0}, {0.5, 0.5}, {true, false});
  Rng rng(11);
  const auto pairs = sample_preferences(inst, 0, 20000, rng);
  std::size_t first_wins = 0;
  for (const auto& p : pairs) first_wins += p.winner == 0;
  const double expected = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(static_cast<double>(first_wins) / 20000.0 == Approx(expected).epsilon(0.02));
}

TEST_CASE("exhaustive preferences keep both orders for tied rewards") {
  const auto inst = AlignmentInstance::from_vectors("t", {1, 1, 0}, {0.2, 0.3, 0.5},
                                                    {true, true, false});
  const auto pairs = exhaustive_preferences(inst, 4);
  // (0,2) and (1,2) once each, the tie (0,1) in both orders
  CHECK(pairs.size() == 4);
  for (const auto& p : pairs) CHECK(p.instance == 4);
}

TEST_CASE("zero steps reports the initial policy only") {
  const auto suite = three_way();
  OfflineConfig config;
  config.steps = 0;
  const auto pairs = exhaustive_suite_preferences(suite);
  const auto result = train_offline(suite, config, pairs);
  REQUIRE(result.history.size() == 1);
  CHECK(result.history[0].step == 0);
  const auto p = result.policy.distribution(0);
  CHECK(p[0] == Approx(0.5));
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto suite = three_way();
  OfflineConfig config;
  config.method = OfflineMethod::qempo;
  config.inv_lambda = 0.1;
  config.learning_rate = 5.0;
  config.steps = 50;
  config.batch_size = 2;
  config.seed = 9;
  const auto pairs = exhaustive_suite_preferences(suite);
  const auto a = train_offline(suite, config, pairs);
  const auto b = train_offline(suite, config, pairs);
  CHECK(offline_history_csv(a.history) == offline_history_csv(b.history));
  CHECK(a.history.back().loss < a.history.front().loss);
  CHECK(offline_history_csv(a.history).rfind("step,loss,entropy_mean,quality_mass_mean\n", 0) == 0);
}

TEST_CASE("config validation") {
  OfflineConfig config;
  config.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(config), InvalidArgument);
  config = {};
  config.eval_interval = 0;
  CHECK_THROWS_AS(validate(config), InvalidArgument);
  CHECK_THROWS_AS(offline_method_from_string("ipo"), InvalidArgument);
}

TEST_CASE("training failure carries the step and last finite loss") {
  const TrainingFailure e(17, 0.25, "boom");
  CHECK(e.step() == 17);
  CHECK(e.last_finite_loss() == 0.25);
  CHECK(e.kind() == ErrorKind::training_failure);
}

}  // TEST_SUITE

#include <cmath>
#include <vector>

#include "doctest.h"
#include "qempo/errors.hpp"
#include "qempo/online.hpp"
#include "qempo/oracle.hpp"
#include "support/random_instances.hpp"

using namespace qempo;
using doctest::Approx;

namespace {

GroupSample fixed_group() {
  GroupSample g;
  g.indices = {0, 1, 0, 2};
  g.rewards = {1, 0, 1, 0};
  g.log_probs = {-0.9, -1.6, -0.9, -2.1};
  g.ref_log_probs = {-1.1, -1.3, -1.1, -1.8};
  return g;
}

ScenarioSuite toy_suite() {
  return ScenarioSuite({AlignmentInstance::from_vectors("a", {1, 0, 1, 0}, {0.1, 0.4, 0.2, 0.3},
                                                        {true, false, true, false})},
                       5);
}

}  // namespace

TEST_SUITE("online") {

TEST_CASE("group losses against frozen values") {
  const auto g = fixed_group();
  CHECK(qempo_online_loss(g, 0.5, VarianceGate::always) == Approx(-0.17328125).epsilon(1e-14));
  CHECK(qempo_online_loss(g, 0.5, VarianceGate::all_correct) == Approx(-0.2375).epsilon(1e-14));
  CHECK(qempo_online_loss(g, 0.5, VarianceGate::any_correct) ==
        Approx(-0.17328125).epsilon(1e-14));
  CHECK(qempo_kl_online_loss(g, 0.5, 0.2, VarianceGate::always) ==
        Approx(-0.24530625).epsilon(1e-14));
  CHECK(rlhf_grpo_baseline_loss(g, 0.1) == Approx(-0.2425).epsilon(1e-14));
}

TEST_CASE("published listing variant") {
  OnlineConfig config;
  config.method = OnlineMethod::qempo_kl;
  config.inv_lambda1 = 0.5;
  config.ratio21 = 0.1;
  config.gate = VarianceGate::always;
  config.form = OnlineLossForm::listing;
  const auto g = fixed_group();
  CHECK(online_group_loss(config, g, g.log_probs).loss == Approx(-0.0969675).epsilon(1e-13));
  CHECK(online_loss_form_from_string("paper-code-variant") == OnlineLossForm::listing);
}

TEST_CASE("gate rules") {
  const std::vector<double> all = {1, 1, 1};
  const std::vector<double> some = {1, 0, 1};
  const std::vector<double> none = {0, 0, 0};
  CHECK(gate_open(VarianceGate::all_correct, all));
  CHECK_FALSE(gate_open(VarianceGate::all_correct, some));
  CHECK(gate_open(VarianceGate::any_correct, some));
  CHECK_FALSE(gate_open(VarianceGate::any_correct, none));
  CHECK(gate_open(VarianceGate::always, none));
}

TEST_CASE("advantages") {
  const std::vector<double> r = {1, 0, 1, 0};
  const auto a = grpo_advantages(r);
  CHECK(a[0] == Approx(0.5));
  CHECK(a[1] == Approx(-0.5));
  const auto s = grpo_advantages(r, true);
  CHECK(s[0] == Approx(1.0).epsilon(1e-7));
  const std::vector<double> flat = {1, 1};
  CHECK(grpo_advantages(flat, true)[0] == 0.0);
}

TEST_CASE("loss plus offset is the implied-reward regression") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto g = testing::random_group(rng, 2 + rng.below(12));
    const double b = testing::log_uniform(rng, 1e-3, 2.0);
    const double c = testing::log_uniform(rng, 1e-3, 2.0);
    CHECK(qempo_online_loss(g, b, VarianceGate::always) + qempo_online_offset(g) ==
          Approx(implied_reward_mse(g, b, 0.0)).epsilon(1e-10));
    CHECK(qempo_kl_online_loss(g, b, c, VarianceGate::always) + qempo_kl_online_offset(g, c) ==
          Approx(implied_reward_mse(g, b + c, c)).epsilon(1e-10));
  }
}

TEST_CASE("analytic gradients match finite differences") {
  const auto suite = toy_suite();
  const LogitPolicy policy({"a"}, {{0.2, -0.4, 0.7, 0.1}});
  Rng rng(4);
  std::vector<GroupSample> groups = {sample_group(policy, suite, 0, 8, rng),
                                     sample_group(policy, suite, 0, 8, rng)};
  for (auto method : {OnlineMethod::qempo, OnlineMethod::qempo_kl, OnlineMethod::grpo_baseline}) {
    for (auto form : {OnlineLossForm::canonical, OnlineLossForm::listing}) {
      OnlineConfig config;
      config.method = method;
      config.form = form;
      config.gate = VarianceGate::always;
      config.inv_lambda = 0.3;
      config.inv_lambda1 = 0.3;
      config.ratio21 = 0.2;
      config.beta = 0.05;
      const auto analytic = online_gradient(config, policy, groups);
      const ScalarFunction f = [&](std::span<const double> theta) {
        const LogitPolicy p({"a"}, {std::vector<double>(theta.begin(), theta.end())});
        return online_loss(config, p, groups);
      };
      const auto numeric = finite_diff_gradient(f, policy.logits(0));
      CHECK(relative_gradient_error(analytic[0], numeric) < 1e-6);
    }
  }
}

TEST_CASE("sampled groups carry consistent log-probabilities") {
  const auto suite = toy_suite();
  const auto policy = LogitPolicy::from_reference(suite);
  Rng rng(8);
  const auto g = sample_group(policy, suite, 0, 10, rng);
  CHECK(g.size() == 10);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g.log_probs[i] == Approx(g.ref_log_probs[i]));
    CHECK(g.rewards[i] == suite[0].rewards()[g.indices[i]]);
  }
}

TEST_CASE("training is deterministic per seed") {
  const auto suite = toy_suite();
  OnlineConfig config;
  config.steps = 20;
  config.inv_lambda = 0.5;
  config.learning_rate = 0.5;
  config.eval_interval = 5;
  config.eval_samples = 20;
  config.pass_k = {1, 8};
  config.seed = 3;
  const auto a = train_online(suite, config);
  const auto b = train_online(suite, config);
  CHECK(online_history_csv(config, a.history) == online_history_csv(config, b.history));
  CHECK(online_history_csv(config, a.history)
            .rfind("step,method,loss,entropy_mean,expected_reward_mean,pass@1,pass@8\n", 0) == 0);
  config.seed = 4;
  const auto c = train_online(suite, config);
  CHECK(online_history_csv(config, a.history) != online_history_csv(config, c.history));
}

TEST_CASE("config validation") {
  OnlineConfig config;
  config.group_size = 1;
  CHECK_THROWS_AS(validate(config), InvalidArgument);
  config = {};
  config.pass_k = {200};
  CHECK_THROWS_AS(validate(config), InvalidArgument);
  CHECK_THROWS_AS(online_method_from_string("ppo"), InvalidArgument);
  CHECK_THROWS_AS(variance_gate_from_string("sometimes"), InvalidArgument);
}

}  // TEST_SUITE

TEST_SUITE("online") {

namespace {

GroupSample two_sample(std::vector<double> rewards) {
  GroupSample g;
  g.indices = {0, 1};
  g.rewards = std::move(rewards);
  g.log_probs = {-1, -2};
  g.ref_log_probs = {-1.5, -1.5};
  return g;
}

}  // namespace

TEST_CASE("worked loss examples") {
  CHECK(qempo_online_loss(two_sample({1, 1}), 1.0, VarianceGate::all_correct) ==
        Approx(0.25).epsilon(1e-14));
  CHECK(qempo_online_loss(two_sample({1, 0}), 1.0, VarianceGate::all_correct) ==
        Approx(-0.5).epsilon(1e-14));
  const auto g = two_sample({1, 0});
  CHECK(qempo_online_loss(g, 1.0, VarianceGate::always) + qempo_online_offset(g) ==
        Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(implied_reward_mse(g, 1.0, 0.0) == Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("advantage examples") {
  const std::vector<double> r = {1, 0, 1};
  const auto a = grpo_advantages(r);
  CHECK(a[0] == Approx(1.0 / 3).epsilon(1e-15));
  CHECK(a[1] == Approx(-2.0 / 3).epsilon(1e-15));
  CHECK(std::abs(a[0] + a[1] + a[2]) <= 1e-12);
  const std::vector<double> flat = {0.3, 0.3, 0.3};
  for (double v : grpo_advantages(flat)) CHECK(v == 0.0);
  const std::vector<double> one = {1};
  CHECK_THROWS_AS(grpo_advantages(one), InvalidArgument);
}

TEST_CASE("kl coupling vanishes at ratio zero") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto g = testing::random_group(rng, 2 + rng.below(10));
    for (auto gate : {VarianceGate::always, VarianceGate::all_correct}) {
      CHECK(qempo_kl_online_loss(g, 0.7, 0.0, gate) == qempo_online_loss(g, 0.7, gate));
    }
  }
}

TEST_CASE("baseline reductions") {
  auto g = fixed_group();
  g.ref_log_probs = g.log_probs;
  const double pg = rlhf_grpo_baseline_loss(g, 0.0);
  CHECK(rlhf_grpo_baseline_loss(g, 0.3) == Approx(pg).epsilon(1e-15));
  g.rewards = {1, 1, 1, 1};
  CHECK(rlhf_grpo_baseline_loss(g, 0.0) == 0.0);
}

TEST_CASE("opening the gate only adds a nonnegative variance term") {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto g = testing::random_group(rng, 2 + rng.below(10));
    const double closed = qempo_online_loss(g, 0.5, VarianceGate::all_correct);
    const double open = qempo_online_loss(g, 0.5, VarianceGate::always);
    CHECK(open >= closed - 1e-15);
  }
}

TEST_CASE("qempo spreads over the correct set, the baseline collapses") {
  const auto inst = AlignmentInstance::from_vectors(
      "e", {1, 1, 1, 1, 0, 0, 0, 0}, {0.05, 0.1, 0.15, 0.2, 0.1, 0.15, 0.1, 0.15},
      {true, true, true, true, false, false, false, false});
  const ScenarioSuite suite({inst}, 1);
  OnlineConfig config;
  config.inv_lambda = 0.5;
  config.beta = 0.01;
  config.steps = 200;
  config.seed = 3;
  config.eval_interval = 200;
  const auto q = softmax_from_logits(train_online(suite, config).policy.logits(0));
  config.method = OnlineMethod::grpo_baseline;
  const auto b = softmax_from_logits(train_online(suite, config).policy.logits(0));
  CHECK(quality_mass(q, inst) >= 0.9);
  CHECK(std::abs(positive_conditional_entropy(q, inst) - std::log(4.0)) <= 0.1 * std::log(4.0));
  CHECK(quality_mass(b, inst) >= 0.9);
  CHECK(entropy(b) <= entropy(q));
}

TEST_CASE("always-on variance with no correct samples inflates entropy") {
  const auto inst = AlignmentInstance::from_vectors("w", {0, 0, 0, 0}, {0.6, 0.2, 0.15, 0.05},
                                                    {false, false, false, false});
  const ScenarioSuite suite({inst}, 1);
  OnlineConfig config;
  config.inv_lambda = 0.5;
  config.steps = 100;
  config.seed = 3;
  config.eval_interval = 100;
  config.gate = VarianceGate::always;
  const auto always = train_online(suite, config).history;
  config.gate = VarianceGate::all_correct;
  const auto gated = train_online(suite, config).history;
  CHECK(always.back().entropy_mean > always.front().entropy_mean + 0.1);
  CHECK(always.back().expected_reward_mean == 0.0);
  CHECK(gated.back().entropy_mean == gated.front().entropy_mean);
}

}

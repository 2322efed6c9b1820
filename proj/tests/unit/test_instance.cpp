#include <cmath>
#include <limits>

#include "doctest.h"
#include "qempo/errors.hpp"
#include "qempo/instance.hpp"
#include "support/random_instances.hpp"

using namespace qempo;
using doctest::Approx;

namespace {

AlignmentInstance four_uniform_two_positive() {
  return AlignmentInstance::from_vectors("u4", {1, 1, 0, 0}, {0.25, 0.25, 0.25, 0.25},
                                         {true, true, false, false});
}

}  // namespace

TEST_SUITE("instance") {

TEST_CASE("instance validation") {
  CHECK_THROWS_AS(AlignmentInstance::from_vectors("a", {1.0}, {1.0}, {true}), InvalidArgument);
  CHECK_THROWS_AS(AlignmentInstance::from_vectors("a", {1, 0}, {0.6, 0.6}, {true, false}),
                  InvalidArgument);
  CHECK_THROWS_AS(AlignmentInstance::from_vectors("a", {1, 0}, {1.2, -0.2}, {true, false}),
                  InvalidArgument);
  CHECK_THROWS_AS(
      AlignmentInstance::from_vectors("a", {1, std::nan("")}, {0.5, 0.5}, {true, false}),
      InvalidArgument);
  const auto inst = four_uniform_two_positive();
  CHECK(inst.positive_count() == 2);
  CHECK(inst.negative_count() == 2);
  CHECK(inst.has_binary_quality_rewards());
}

TEST_CASE("duplicate ids rejected in a suite") {
  const auto a = four_uniform_two_positive();
  CHECK_THROWS_AS(ScenarioSuite({a, a}, 0), InvalidArgument);
}

TEST_CASE("softmax and log-sum-exp") {
  const std::vector<double> z = {1.0, 0.0};
  const auto p = softmax_from_logits(z);
  CHECK(p[0] == Approx(0.73105857863000488).epsilon(1e-15));
  CHECK(p[1] == Approx(0.26894142136999512).epsilon(1e-15));

  // large logits stay finite
  const std::vector<double> big = {1000.0, 999.0};
  const auto q = softmax_from_logits(big);
  CHECK(q[0] == Approx(0.73105857863000488).epsilon(1e-14));
  CHECK(log_sum_exp(big) == Approx(1000.0 + std::log1p(std::exp(-1.0))));

  const std::vector<double> bad = {1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(softmax_from_logits(bad), InvalidArgument);
}

TEST_CASE("entropy and kl") {
  const auto p = softmax_from_logits(std::vector<double>{1.0, 0.0});
  CHECK(entropy(p) == Approx(0.58220310888821795).epsilon(1e-14));
  CHECK(entropy(std::vector<double>{1.0, 0.0}) == 0.0);

  CHECK(kl_divergence(std::vector<double>{0.75, 0.25}, std::vector<double>{0.9, 0.1}) ==
        Approx(0.092331515373072797).epsilon(1e-14));
  CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}),
                  SupportMismatch);
}

TEST_CASE("ideal policy") {
  const auto a = AlignmentInstance::from_vectors("a", {1, 1, 0, 0}, {0.25, 0.25, 0.25, 0.25},
                                                 {true, true, false, false});
  const auto pa = ideal_policy(a, 0.1);
  CHECK(pa[0] == Approx(0.45));
  CHECK(pa[1] == Approx(0.45));
  CHECK(pa[2] == Approx(0.05));
  CHECK(pa[3] == Approx(0.05));

  const auto b = AlignmentInstance::from_vectors("b", {1, 0, 0, 0}, {0.25, 0.25, 0.25, 0.25},
                                                 {true, false, false, false});
  const auto pb = ideal_policy(b, 0.3);
  CHECK(pb[0] == Approx(0.7));
  CHECK(pb[3] == Approx(0.1));
  CHECK_THROWS_AS(ideal_policy(b, 0.0), InvalidArgument);
  CHECK_THROWS_AS(ideal_policy(b, 1.0), InvalidArgument);
}

TEST_CASE("kl decomposition on the uniform policy") {
  const auto inst = four_uniform_two_positive();
  const std::vector<double> u = {0.25, 0.25, 0.25, 0.25};
  const auto d = alignment_kl_decomposition(u, inst, 0.1);
  CHECK(d.kl == Approx(0.51082562376599068).epsilon(1e-14));
  CHECK(d.entropy == Approx(1.3862943611198906).epsilon(1e-14));
  CHECK(d.quality_term == Approx(-1.8971199848858813).epsilon(1e-14));
  CHECK(std::abs(d.kl + d.entropy + d.quality_term) < 1e-12);
}

TEST_CASE("kl decomposition on a point mass") {
  const auto inst = four_uniform_two_positive();
  const std::vector<double> point = {1.0, 0.0, 0.0, 0.0};
  const auto d = alignment_kl_decomposition(point, inst, 0.1);
  CHECK(d.kl == Approx(-std::log(0.45)));
  CHECK(d.entropy == 0.0);
  CHECK(std::abs(d.kl + d.entropy + d.quality_term) < 1e-12);
}

TEST_CASE("decomposition needs both quality classes") {
  const auto inst =
      AlignmentInstance::from_vectors("p", {1, 1}, {0.5, 0.5}, {true, true});
  CHECK_THROWS_AS(ideal_policy(inst), InvalidArgument);
}

TEST_CASE("policy gradient objective equals quality mass under 0/1 rewards") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto inst = testing::random_instance(rng, {3, 6, 0.0, true});
    const auto p = testing::random_simplex(rng, inst.size());
    CHECK(policy_gradient_objective(p, inst) == quality_mass(p, inst));
  }
}

TEST_CASE("logit policy from reference reproduces the reference") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0, 0}, {0.2, 0.8, 0.0},
                                                    {true, false, false});
  const ScenarioSuite suite({inst}, 0);
  const auto policy = LogitPolicy::from_reference(suite);
  const auto p = policy.distribution(0);
  CHECK(p[0] == Approx(0.2));
  CHECK(p[1] == Approx(0.8));
  CHECK(p[2] < 1e-300);
}

}  // TEST_SUITE

#include <cmath>

#include "doctest.h"
#include "qempo/closed_form.hpp"
#include "qempo/errors.hpp"
#include "support/random_instances.hpp"

using namespace qempo;
using doctest::Approx;

TEST_SUITE("closed_form") {

TEST_CASE("rlhf optimum against frozen values") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0, 0}, {1.0 / 3, 1.0 / 3, 1.0 / 3},
                                                    {true, false, false});
  const auto res = rlhf_optimal(inst, 1.0);
  CHECK(res.dist[0] == Approx(0.57611688476582911).epsilon(1e-14));
  CHECK(res.dist[1] == Approx(0.21194155761708545).epsilon(1e-14));
  CHECK(res.dist[2] == Approx(0.21194155761708545).epsilon(1e-14));
}

TEST_CASE("rlhf limits in beta") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0}, {0.3, 0.7}, {true, false});
  const auto loose = rlhf_optimal(inst, 1e8);
  CHECK(loose.dist[0] == Approx(0.3).epsilon(1e-6));
  const auto tight = rlhf_optimal(inst, 1e-3);
  CHECK(tight.dist[0] == Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(rlhf_optimal(inst, 0.0), InvalidArgument);
}

TEST_CASE("rlhf keeps zero reference mass at zero") {
  const auto inst =
      AlignmentInstance::from_vectors("a", {5, 0, 1}, {0.0, 0.5, 0.5}, {true, false, true});
  const auto res = rlhf_optimal(inst, 0.1);
  CHECK(res.dist[0] == 0.0);
  CHECK(res.excluded == std::vector<std::size_t>{0});
  CHECK(std::isfinite(res.kl_to_ref));
}

TEST_CASE("qempo optimum against frozen values") {
  const auto inst = AlignmentInstance::from_vectors("a", {2, 1, 0}, {0.1, 0.1, 0.8},
                                                    {true, true, false});
  const auto res = qempo_optimal(inst, 0.5);
  CHECK(res.dist[0] == Approx(0.50648039105565403).epsilon(1e-14));
  CHECK(res.dist[1] == Approx(0.3071958857184984).epsilon(1e-14));
  CHECK(res.dist[2] == Approx(0.18632372322584758).epsilon(1e-14));
}

TEST_CASE("qempo ignores the reference and reaches zero-reference candidates") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 1, 0}, {0.0, 0.2, 0.8},
                                                    {true, true, false});
  const auto res = qempo_optimal(inst, 3.0);
  CHECK(res.dist[0] == Approx(res.dist[1]));
  CHECK(res.dist[0] > 0.0);
  CHECK(std::isinf(res.kl_to_ref));
}

TEST_CASE("qempo-kl optimum against frozen values") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0, 0.5}, {0.2, 0.5, 0.3},
                                                    {true, false, true});
  const auto res = qempo_kl_optimal(inst, 2.0, 1.0);
  CHECK(res.dist[0] == Approx(0.43019749199224916).epsilon(1e-14));
  CHECK(res.dist[1] == Approx(0.25023231663192704).epsilon(1e-14));
  CHECK(res.dist[2] == Approx(0.3195701913758238).epsilon(1e-14));
  CHECK(res.entropy == Approx(1.0740982469801504).epsilon(1e-13));
  CHECK(res.kl_to_ref == Approx(0.17647955071437106).epsilon(1e-13));
  CHECK(res.expected_reward == Approx(0.58998258768016106).epsilon(1e-13));
}

TEST_CASE("qempo-kl approaches qempo as lambda2 vanishes") {
  Rng rng(3);
  const auto inst = testing::random_instance(rng, {});
  const auto a = qempo_kl_optimal(inst, 1.7, 1e-12);
  const auto b = qempo_optimal(inst, 1.7);
  for (std::size_t i = 0; i < inst.size(); ++i) CHECK(a.dist[i] == Approx(b.dist[i]).epsilon(1e-9));
}

TEST_CASE("constant rewards give the uniform or reference policy") {
  const auto inst = AlignmentInstance::from_vectors("c", {1, 1, 1}, {0.2, 0.3, 0.5},
                                                    {true, true, true});
  const auto q = qempo_optimal(inst, 4.0);
  for (double p : q.dist) CHECK(p == Approx(1.0 / 3));
  const auto r = rlhf_optimal(inst, 0.2);
  CHECK(r.dist[2] == Approx(0.5));
}

TEST_CASE("parameter validation") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0}, {0.5, 0.5}, {true, false});
  CHECK_THROWS_AS(qempo_optimal(inst, -1.0), InvalidArgument);
  CHECK_THROWS_AS(qempo_kl_optimal(inst, 1.0, -0.5), InvalidArgument);
  CHECK_THROWS_AS(qempo_kl_optimal(inst, 0.0, 1.0), InvalidArgument);
  CHECK(method_from_string("qempo-kl") == Method::qempo_kl);
  CHECK_THROWS_AS(method_from_string("ppo"), InvalidArgument);
}

TEST_CASE("tempered softmax entropy derivative") {
  const std::vector<double> z = {1, 2, 4};
  CHECK(tempered_entropy_derivative(z, 0.7) == Approx(-0.79127112823391075).epsilon(1e-13));
  const std::vector<double> flat = {3, 3, 3};
  CHECK(tempered_entropy_derivative(flat, 2.0) == 0.0);
  CHECK_THROWS_AS(tempered_softmax(z, 0.0), InvalidArgument);
}

TEST_CASE("implied rewards recover centered rewards") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0, 0.5}, {0.2, 0.5, 0.3},
                                                    {true, false, true});
  const auto centered = mean_centered(inst.rewards());
  for (const auto& params : {MethodParams::rlhf(0.7), MethodParams::qempo(1.3),
                             MethodParams::qempo_kl(2.0, 0.5)}) {
    const auto res = closed_form_policy(inst, params);
    const auto implied = mean_centered(implied_reward(res.dist.probs(), inst, params));
    for (std::size_t i = 0; i < inst.size(); ++i) CHECK(implied[i] == Approx(centered[i]).epsilon(1e-12));
  }
}

TEST_CASE("implied reward needs full support") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0}, {0.5, 0.5}, {true, false});
  const std::vector<double> p = {1.0, 0.0};
  CHECK_THROWS_AS(implied_reward(p, inst, MethodParams::qempo(1.0)), SupportMismatch);
}

}  // TEST_SUITE

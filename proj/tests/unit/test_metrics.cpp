#include "doctest.h"
#include "qempo/errors.hpp"
#include "qempo/metrics.hpp"

using namespace qempo;
using doctest::Approx;

TEST_SUITE("metrics") {

TEST_CASE("pass@k against frozen values") {
  CHECK(pass_at_k({100, 10, 1}) == Approx(0.1).epsilon(1e-14));
  CHECK(pass_at_k({100, 10, 8}) == Approx(0.58344672700721726).epsilon(1e-13));
  CHECK(pass_at_k({100, 10, 16}) == Approx(0.84049817858150374).epsilon(1e-13));
  CHECK(pass_at_k({5, 2, 2}) == Approx(0.7).epsilon(1e-14));
  CHECK(pass_at_k({100, 0, 4}) == 0.0);
  CHECK(pass_at_k({100, 97, 4}) == 1.0);
  CHECK(pass_at_k({10, 10, 10}) == 1.0);
}

TEST_CASE("pass@k argument checks") {
  CHECK_THROWS_AS(pass_at_k({10, 11, 1}), InvalidArgument);
  CHECK_THROWS_AS(pass_at_k({10, 1, 0}), InvalidArgument);
  CHECK_THROWS_AS(pass_at_k({10, 1, 11}), InvalidArgument);
}

TEST_CASE("pass@k grows with k") {
  double prev = 0.0;
  for (std::size_t k = 1; k <= 50; ++k) {
    const double v = pass_at_k({50, 3, k});
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("qempo frontier trades entropy for reward") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0.5, 0}, {0.6, 0.3, 0.1},
                                                    {true, true, false});
  const auto points = frontier_sweep(inst, qempo_grid({0.1, 1.0, 3.0, 10.0}));
  REQUIRE(points.size() == 4);
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].entropy < points[i - 1].entropy);
    CHECK(points[i].expected_reward > points[i - 1].expected_reward);
  }
  const std::string csv = frontier_csv(points);
  CHECK(csv.rfind("method,instance,beta,lambda,lambda1,lambda2,entropy,expected_reward,"
                  "quality_mass\n",
                  0) == 0);
  CHECK(csv.find("qempo,a,,0.1,,,") != std::string::npos);
  CHECK_THROWS_AS(frontier_sweep(inst, {}), InvalidArgument);
}

TEST_CASE("offline presets") {
  const auto q = offline_qempo_preset();
  REQUIRE(q.size() == 5);
  CHECK(q[2].lambda == Approx(250.0));
  const auto k = offline_qempo_kl_preset();
  REQUIRE(k.size() == 5);
  CHECK(k[0].lambda1 == Approx(250.0));
  CHECK(k[0].lambda2 == Approx(2.5));
}

}  // TEST_SUITE

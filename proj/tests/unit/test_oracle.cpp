#include <cmath>
#include <limits>

#include "doctest.h"
#include "qempo/closed_form.hpp"
#include "qempo/errors.hpp"
#include "qempo/oracle.hpp"

using namespace qempo;
using doctest::Approx;

TEST_SUITE("oracle") {

TEST_CASE("simplex grid enumeration") {
  const SimplexGrid grid(3, 0.1);
  CHECK(grid.expected_count() == 66);
  std::uint64_t count = 0;
  bool sums_ok = true;
  grid.for_each([&](std::span<const double> p) {
    ++count;
    double s = 0.0;
    for (double v : p) s += v;
    sums_ok = sums_ok && std::abs(s - 1.0) < 1e-12;
  });
  CHECK(count == 66);
  CHECK(sums_ok);

  std::vector<std::vector<double>> seen;
  SimplexGrid(2, 0.5).for_each([&](std::span<const double> p) {
    seen.emplace_back(p.begin(), p.end());
  });
  REQUIRE(seen.size() == 3);
  CHECK(seen[0] == std::vector<double>{0.0, 1.0});
  CHECK(seen[2] == std::vector<double>{1.0, 0.0});
}

TEST_CASE("simplex grid limits") {
  CHECK_THROWS_AS(SimplexGrid(6, 0.1), ResourceLimit);
  CHECK_THROWS_AS(SimplexGrid(3, 0.001), ResourceLimit);
  CHECK_THROWS_AS(SimplexGrid(3, 0.3), InvalidArgument);
}

TEST_CASE("brute force on a two-point instance") {
  const auto inst = AlignmentInstance::from_vectors("b", {1, 0}, {0.5, 0.5}, {true, false});
  const SimplexGrid grid(2, 0.01);
  const auto ent = brute_force_max_entropy(inst, 0.7, std::nullopt, grid);
  REQUIRE(ent.best);
  CHECK((*ent.best)[0] == Approx(0.7));
  CHECK(ent.value == Approx(-(0.7 * std::log(0.7) + 0.3 * std::log(0.3))));
  CHECK(ent.visited == 101);

  const auto kl = brute_force_min_kl(inst, 0.7, grid);
  REQUIRE(kl.best);
  CHECK((*kl.best)[0] == Approx(0.7));

  const auto none = brute_force_max_entropy(inst, 1.5, std::nullopt, grid);
  CHECK_FALSE(none.best);
  CHECK(none.feasible == 0);
}

TEST_CASE("kl budget restricts the entropy search") {
  const auto inst = AlignmentInstance::from_vectors("b", {1, 0}, {0.9, 0.1}, {true, false});
  const SimplexGrid grid(2, 0.01);
  const auto free = brute_force_max_entropy(inst, 0.0, std::nullopt, grid);
  CHECK((*free.best)[0] == Approx(0.5));
  const auto tight = brute_force_max_entropy(inst, 0.0, 0.05, grid);
  CHECK((*tight.best)[0] > 0.7);
}

TEST_CASE("grid optimum approaches the closed form") {
  const auto inst = AlignmentInstance::from_vectors("a", {1, 0, 0.5}, {0.2, 0.5, 0.3},
                                                    {true, false, true});
  const auto q = qempo_optimal(inst, 1.5);
  const SimplexGrid grid(3, 0.01);
  const auto best = brute_force_max_entropy(inst, q.expected_reward, std::nullopt, grid);
  REQUIRE(best.best);
  CHECK(best.value <= q.entropy + 1e-12);
  CHECK(q.entropy - best.value <= entropy_grid_gap(3, 0.01));
}

TEST_CASE("finite differences") {
  const ScalarFunction f = [](std::span<const double> x) {
    return x[0] * x[0] + 3.0 * x[1] + std::sin(x[2]);
  };
  const std::vector<double> x = {1.5, -2.0, 0.3};
  const auto g = finite_diff_gradient(f, x);
  const std::vector<double> exact = {3.0, 3.0, std::cos(0.3)};
  CHECK(relative_gradient_error(exact, g) < 1e-8);

  CHECK_THROWS_AS(finite_diff_gradient(f, x, 0.0), InvalidArgument);
  const ScalarFunction blowup = [](std::span<const double> y) {
    return y[0] > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  };
  const std::vector<double> zero = {0.0};
  CHECK_THROWS_AS(finite_diff_gradient(blowup, zero), EvaluationFailure);
}

}  // TEST_SUITE

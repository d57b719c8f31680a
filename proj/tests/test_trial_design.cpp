#include <cmath>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "xover/trial_design.hpp"

using namespace xover;

TEST_CASE("make_design records dimensions and treatment lookup") {
  TrialDesign d = make_design({{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}}, 3);
  CHECK(d.D == 3);
  CHECK(d.P == 2);
  CHECK(d.K == 6);
  CHECK(d.treatment(0, 0) == 0);
  CHECK(d.treatment(1, 0) == 1);
  CHECK(d.treatment(0, 3) == 2);
  CHECK(d.treatment(1, 5) == 1);
}

TEST_CASE("make_design rejects malformed sequence sets") {
  CHECK_THROWS_AS(make_design({}, 2), std::invalid_argument);
  CHECK_THROWS_AS(make_design({{0, 1}, {1}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(make_design({{0, 2}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(make_design({{0, -1}}, 2), std::invalid_argument);
}

TEST_CASE("period balance is detected from the per-period counts") {
  TrialDesign ab = make_design({{0, 1}, {1, 0}}, 2);
  CHECK(ab.period_balanced);
  BalanceReport rep = check_period_balance(ab);
  CHECK(rep.balanced);
  CHECK(rep.counts[0][0] == 1);
  CHECK(rep.counts[0][1] == 1);
  CHECK(rep.counts[1][0] == 1);
  CHECK(rep.counts[1][1] == 1);
  CHECK(rep.adjacent_difference_identity);
  CHECK(rep.constant_period_total_identity);

  // both sequences give treatment 0 first, so period totals differ
  TrialDesign same = make_design({{0, 1}, {0, 1}}, 2);
  CHECK_FALSE(same.period_balanced);
  BalanceReport bad = check_period_balance(same);
  CHECK_FALSE(bad.balanced);
  CHECK(bad.counts[0][0] == 2);
  CHECK(bad.counts[1][0] == 0);
  CHECK_FALSE(bad.adjacent_difference_identity);
}

TEST_CASE("balance implies the adjacent-difference identity for any effects") {
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int D : {3, 4, 5}) {
    TrialDesign d = williams_square(D);
    REQUIRE(d.period_balanced);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<double> tau(D);
      for (double& t : tau) t = u(gen);
      for (int j = 1; j < d.P; ++j) {
        double sum = 0.0;
        for (int k = 0; k < d.K; ++k)
          sum += tau[d.treatment(j, k)] - tau[d.treatment(j - 1, k)];
        CHECK(std::fabs(sum) < 1e-12);  // summation rounding only
      }
    }
  }
}

TEST_CASE("complete-block flag requires each row to cover all treatments") {
  CHECK(williams_square(4).complete_block);
  // P == D but rows repeat a treatment
  TrialDesign rep = make_design({{0, 0}, {1, 1}}, 2);
  CHECK_FALSE(rep.complete_block);
  // P != D can never be complete block
  TrialDesign extra = make_design({{0, 1, 1}, {1, 0, 0}}, 2);
  CHECK_FALSE(extra.complete_block);
}

TEST_CASE("williams squares are balanced latin squares") {
  for (int D : {2, 4, 6, 8}) {
    TrialDesign d = williams_square(D);
    CHECK(d.K == D);
    CHECK(d.P == D);
    CHECK(d.period_balanced);
    CHECK(d.complete_block);
    // latin: every treatment once per row and once per column
    for (int j = 0; j < d.P; ++j) {
      std::set<int> col;
      for (int k = 0; k < d.K; ++k) col.insert(d.treatment(j, k));
      CHECK(static_cast<int>(col.size()) == D);
    }
    // first-order carryover balance: each ordered pair of distinct
    // treatments appears exactly once in adjacent periods
    std::map<std::pair<int, int>, int> pairs;
    for (int k = 0; k < d.K; ++k)
      for (int j = 1; j < d.P; ++j)
        ++pairs[{d.treatment(j - 1, k), d.treatment(j, k)}];
    CHECK(static_cast<int>(pairs.size()) == D * (D - 1));
    for (const auto& [pr, count] : pairs) {
      CHECK(pr.first != pr.second);
      CHECK(count == 1);
    }
  }
}

TEST_CASE("odd williams designs need the doubled sequence set") {
  for (int D : {3, 5, 7}) {
    TrialDesign d = williams_square(D);
    CHECK(d.K == 2 * D);
    CHECK(d.P == D);
    CHECK(d.period_balanced);
    CHECK(d.complete_block);
    std::map<std::pair<int, int>, int> pairs;
    for (int k = 0; k < d.K; ++k)
      for (int j = 1; j < d.P; ++j)
        ++pairs[{d.treatment(j - 1, k), d.treatment(j, k)}];
    for (const auto& [pr, count] : pairs) CHECK(count == 2);
    CHECK_THROWS_AS(williams_square(D, true), std::invalid_argument);
  }
  CHECK_THROWS_AS(williams_square(1), std::invalid_argument);
}

TEST_CASE("builtin example designs match their trials") {
  BuiltinExample e1 = builtin_design("example1");
  CHECK(e1.design.D == 4);
  CHECK(e1.design.P == 4);
  CHECK(e1.design.K == 4);
  CHECK(e1.design.complete_block);
  CHECK(e1.params.sigma_e2 == doctest::Approx(6.51));
  CHECK(e1.params.sigma_b2 == doctest::Approx(10.12));
  CHECK(e1.hyp.delta == doctest::Approx(-1.24));
  CHECK(e1.hyp.direction == Direction::less);
  CHECK(e1.n_int_values == std::vector<int>{8, 16, 24, 32, 40});

  BuiltinExample e2 = builtin_design("example2");
  CHECK(e2.design.D == 3);
  CHECK(e2.design.P == 2);
  CHECK(e2.design.K == 6);
  CHECK_FALSE(e2.design.complete_block);
  CHECK(e2.design.period_balanced);
  CHECK(e2.hyp.alpha == doctest::Approx(0.1));
  CHECK(e2.params.tau[2] == doctest::Approx(0.52));

  BuiltinExample e3 = builtin_design("example3");
  CHECK(e3.design.D == 2);
  CHECK(e3.design.P == 3);
  CHECK(e3.design.K == 4);
  CHECK(e3.design.period_balanced);
  CHECK(e3.hyp.beta == doctest::Approx(0.1));
  CHECK(e3.params.sigma_e2 == doctest::Approx(169.8));

  CHECK_THROWS_AS(builtin_design("example9"), std::invalid_argument);
}

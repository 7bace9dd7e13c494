#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "envae/error.hpp"
#include "envae/grouping.hpp"
#include "envae/mlp.hpp"

using namespace envae;

TEST_CASE("groups partition the features with near-equal sizes") {
  for (std::size_t d : {1u, 7u, 10u, 1000u}) {
    for (std::size_t m = 1; m <= std::min<std::size_t>(d, 9); ++m) {
      const auto g = make_grouping(d, m, 3);
      std::vector<int> seen(d, 0);
      for (std::size_t k = 0; k < m; ++k) {
        CHECK(std::is_sorted(g.members[k].begin(), g.members[k].end()));
        for (std::size_t f : g.members[k]) {
          ++seen[f];
          CHECK(g.assignment[f] == k);
        }
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
      const auto sizes = g.sizes();
      CHECK(*std::max_element(sizes.begin(), sizes.end()) -
                *std::min_element(sizes.begin(), sizes.end()) <=
            1);
      CHECK(sizes == balanced_group_sizes(d, m));
    }
  }
}

TEST_CASE("grouping is seeded") {
  CHECK(make_grouping(50, 4, 1) == make_grouping(50, 4, 1));
  CHECK_FALSE(make_grouping(50, 4, 1).assignment == make_grouping(50, 4, 2).assignment);
}

TEST_CASE("ten features in three groups") {
  CHECK(balanced_group_sizes(10, 3) == std::vector<std::size_t>{4, 3, 3});
}

TEST_CASE("invalid group counts are rejected") {
  CHECK_THROWS_AS(make_grouping(5, 0, 1), ConfigError);
  CHECK_THROWS_AS(make_grouping(5, 6, 1), ConfigError);
}

TEST_CASE("from_assignment rejects empty or unbalanced groups") {
  CHECK_NOTHROW(FeatureGrouping::from_assignment({0, 1, 0, 1}, 2, 0));
  CHECK_THROWS(FeatureGrouping::from_assignment({0, 0, 0, 0}, 2, 0));
  CHECK_THROWS(FeatureGrouping::from_assignment({0, 0, 0, 1}, 2, 0));
}

TEST_CASE("expert parameter count sums encoder and decoder") {
  const std::size_t d = 20, L = 3;
  const std::vector<std::size_t> h{8};
  const std::size_t enc = mlp_parameter_count({d, h, 2 * L, true, 0.0});
  const std::size_t dec = mlp_parameter_count({L, h, d, true, 0.0});
  CHECK(expert_parameter_count(d, L, h, true) == enc + dec);
}

TEST_CASE("budget-matched widths stay within ten percent of the baseline") {
  const std::size_t D = 1000, L = 16;
  const std::size_t base = expert_parameter_count(D, L, {128, 128}, true);
  CHECK(expert_widths_for_budget(D, L, 1) == std::vector<std::size_t>{128, 128});
  for (std::size_t m : {2u, 4u, 6u, 8u}) {
    const auto h = expert_widths_for_budget(D, L, m);
    std::size_t total = 0;
    for (std::size_t s : balanced_group_sizes(D, m)) total += expert_parameter_count(s, L, h, true);
    CAPTURE(m);
    CHECK(std::abs(static_cast<double>(total) - static_cast<double>(base)) <= 0.1 * base);
  }
}

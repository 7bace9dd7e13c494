#include "envae/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "envae/error.hpp"
#include "envae/mlp.hpp"
#include "envae/rng.hpp"

namespace envae {

std::vector<std::size_t> FeatureGrouping::sizes() const {
  std::vector<std::size_t> s;
  for (const auto& g : members) s.push_back(g.size());
  return s;
}

FeatureGrouping FeatureGrouping::from_assignment(std::vector<std::size_t> assignment,
                                                 std::size_t groups, std::uint64_t seed) {
  FeatureGrouping g;
  g.features = assignment.size();
  g.groups = groups;
  g.seed = seed;
  g.members.assign(groups, {});
  for (std::size_t f = 0; f < assignment.size(); ++f) {
    if (assignment[f] >= groups) throw DataError("group index out of range in assignment");
    g.members[assignment[f]].push_back(f);
  }
  std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
  for (const auto& m : g.members) {
    lo = std::min(lo, m.size());
    hi = std::max(hi, m.size());
  }
  if (groups == 0 || lo == 0) throw DataError("feature grouping has an empty group");
  if (hi - lo > 1) throw DataError("feature group sizes differ by more than one");
  g.assignment = std::move(assignment);
  return g;
}

std::vector<std::size_t> balanced_group_sizes(std::size_t features, std::size_t groups) {
  std::vector<std::size_t> sizes(groups, features / groups);
  for (std::size_t g = 0; g < features % groups; ++g) ++sizes[g];
  return sizes;
}

FeatureGrouping make_grouping(std::size_t features, std::size_t groups, std::uint64_t seed) {
  if (groups < 1 || groups > features) {
    throw ConfigError("need 1 <= m <= D for feature grouping (m=" + std::to_string(groups) +
                      ", D=" + std::to_string(features) + ")");
  }
  std::vector<std::size_t> perm(features);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {0x6772u}));
  shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> assignment(features);
  std::size_t pos = 0;
  const auto sizes = balanced_group_sizes(features, groups);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t k = 0; k < sizes[g]; ++k) assignment[perm[pos++]] = g;
  }
  return FeatureGrouping::from_assignment(std::move(assignment), groups, seed);
}

std::size_t expert_parameter_count(std::size_t group_features, std::size_t latent_dim,
                                   const std::vector<std::size_t>& hidden, bool batch_norm) {
  const MlpShape enc{group_features, hidden, 2 * latent_dim, batch_norm, 0.0};
  const MlpShape dec{latent_dim, hidden, group_features, batch_norm, 0.0};
  return mlp_parameter_count(enc) + mlp_parameter_count(dec);
}

std::vector<std::size_t> expert_widths_for_budget(std::size_t features, std::size_t latent_dim,
                                                  std::size_t groups,
                                                  const std::vector<std::size_t>& baseline_hidden,
                                                  bool batch_norm) {
  if (groups < 1) throw ConfigError("expert count must be >= 1");
  if (groups == 1) return baseline_hidden;
  const double budget = static_cast<double>(
      expert_parameter_count(features, latent_dim, baseline_hidden, batch_norm));
  const auto sizes = balanced_group_sizes(features, groups);
  const std::size_t depth = baseline_hidden.size();

  std::size_t best_width = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t h = 4; h <= 1024; ++h) {
    const std::vector<std::size_t> hidden(depth, h);
    double total = 0.0;
    for (std::size_t d : sizes) {
      total += static_cast<double>(expert_parameter_count(d, latent_dim, hidden, batch_norm));
    }
    const double gap = std::abs(total - budget);
    if (gap < best_gap) {
      best_gap = gap;
      best_width = h;
    }
  }
  if (best_gap > 0.1 * budget) {
    throw ConfigError("no expert width in [4, 1024] keeps " + std::to_string(groups) +
                      " experts within 10% of the baseline parameter budget");
  }
  return std::vector<std::size_t>(depth, best_width);
}

}  // namespace envae

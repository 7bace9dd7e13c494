#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace envae {

// Partition of D feature indices into m disjoint, near-equal groups.
struct FeatureGrouping {
  std::size_t features = 0;
  std::size_t groups = 0;
  std::vector<std::size_t> assignment;        // feature -> group
  std::vector<std::vector<std::size_t>> members;  // group -> ascending feature indices
  std::uint64_t seed = 0;

  std::size_t group_size(std::size_t g) const { return members[g].size(); }
  std::vector<std::size_t> sizes() const;

  // Rebuilds `members` from `assignment` and checks the partition invariants.
  static FeatureGrouping from_assignment(std::vector<std::size_t> assignment, std::size_t groups,
                                         std::uint64_t seed);

  friend bool operator==(const FeatureGrouping&, const FeatureGrouping&) = default;
};

// Random permutation of 0..D-1 cut into m contiguous blocks; the first D % m
// blocks get one extra feature. Throws ConfigError unless 1 <= m <= D.
FeatureGrouping make_grouping(std::size_t features, std::size_t groups, std::uint64_t seed);

// Sizes of the m near-equal blocks make_grouping produces for D features.
std::vector<std::size_t> balanced_group_sizes(std::size_t features, std::size_t groups);

// Parameters of one expert (encoder d -> h.. -> 2L plus decoder L -> h.. -> d).
std::size_t expert_parameter_count(std::size_t group_features, std::size_t latent_dim,
                                   const std::vector<std::size_t>& hidden, bool batch_norm);

// Equal hidden widths for m experts whose summed encoder+decoder parameter
// count is closest to the single-expert baseline with `baseline_hidden`.
// Searches widths 4..1024; throws ConfigError if the best candidate is more
// than 10% away from the baseline budget.
std::vector<std::size_t> expert_widths_for_budget(std::size_t features, std::size_t latent_dim,
                                                  std::size_t groups,
                                                  const std::vector<std::size_t>& baseline_hidden =
                                                      {128, 128},
                                                  bool batch_norm = true);

}  // namespace envae

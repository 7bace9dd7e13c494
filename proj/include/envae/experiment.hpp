#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "envae/config.hpp"
#include "envae/dataset.hpp"
#include "envae/metrics.hpp"
#include "envae/model.hpp"
#include "envae/training.hpp"

namespace envae {

struct FoldModel {
  SplitPlan plan;
  MinMaxScaler scaler;
  EnVaeModel model;
};

MinMaxScaler fold_scaler(const Dataset& data, const SplitPlan& plan, bool scale_on_all);
std::vector<FoldModel> to_fold_models(std::vector<FoldResult> folds);

struct EvalResult {
  std::vector<std::vector<DownstreamRun>> runs;  // fold x classifier seed
  std::vector<std::optional<double>> head_accuracy;  // per fold, supervised models only

  // Fold-major, seed-minor.
  std::vector<double> accuracies() const;
  Summary summary() const;
};

// Downstream classifier protocol on every fold.
EvalResult evaluate(const Dataset& data, const RunConfig& cfg, const std::vector<FoldModel>& folds);

struct TcResult {
  std::vector<double> per_fold;
  Summary summary() const;
};

TcResult total_correlation(const Dataset& data, const RunConfig& cfg,
                           const std::vector<FoldModel>& folds);

struct MaskRow {
  std::size_t dropped = 0;
  std::size_t subsets = 0;          // availability masks evaluated per run
  std::vector<double> accuracies;   // per (fold, seed), averaged over the masks
  Summary summary() const;
};

// Classifiers are trained on all-group latents exactly as in evaluate();
// test latents are then inferred from every subset of groups with
// `dropped` groups missing. Exhaustive for m <= 8, otherwise up to 256
// seeded random subsets per drop count.
std::vector<MaskRow> mask_curve(const Dataset& data, const RunConfig& cfg,
                                const std::vector<FoldModel>& folds);

// Rows of the given split (or all samples) of one fold.
std::vector<std::size_t> split_rows(const SplitPlan& plan, const std::string& split,
                                    std::size_t samples);

}  // namespace envae

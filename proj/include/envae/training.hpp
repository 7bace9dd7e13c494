#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "envae/dataset.hpp"
#include "envae/matrix.hpp"
#include "envae/mlp.hpp"
#include "envae/model.hpp"

namespace envae {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10000;
  std::size_t patience = 100;
  double beta_max = 1.0;
  std::size_t beta_warmup_epochs = 100;
  double clip = 2.5;
  std::uint64_t seed = 0;
  bool supervised = false;
  ModelConfig model;  // latent_dim, experts, elbo_mode, include_prior, ...

  // Throws ConfigError on an inconsistent setting.
  void validate() const;
};

// beta_max * min(1, epoch / warmup); beta_max from the first epoch when the
// warm-up is 0.
double beta_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  std::vector<double> beta;
  std::size_t best_epoch = 0;
  double seconds = 0.0;

  std::size_t epochs() const { return train_loss.size(); }
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  EnVaeModel model;  // weights from the best validation epoch
  TrainHistory history;
};

// Mini-batch Adam with global-norm clipping and early stopping on the
// eval-mode validation loss (scored at beta_max with a fixed noise stream).
// Labels are used only when cfg.supervised is set.
TrainResult train(EnVaeModel model, const Matrix& x_train, const std::vector<int>& y_train,
                  const Matrix& x_valid, const std::vector<int>& y_valid, const TrainConfig& cfg);

// Validation loss exactly as train() scores it.
double validation_loss(const EnVaeModel& model, const Matrix& x_valid,
                       const std::vector<int>& y_valid, const TrainConfig& cfg);

// Row batches for one epoch; a trailing batch of one row joins the previous
// batch so batch norm always sees at least two rows.
std::vector<std::vector<std::size_t>> make_batches(std::size_t rows, std::size_t batch_size,
                                                   Rng& rng);

// Rows of `x` restricted to `idx`, min-max scaled with `scaler`.
Matrix scaled_rows(const Matrix& x, const MinMaxScaler& scaler,
                   std::span<const std::size_t> idx);
std::vector<int> pick_labels(const std::vector<int>& y, std::span<const std::size_t> idx);

struct CvOptions {
  std::size_t folds = 5;
  double valid_fraction = 0.08;
  std::optional<std::size_t> n_train;  // stratified train subsample per fold
  bool scale_on_all = false;           // fit the scaler on every sample
  std::size_t threads = 1;
};

struct FoldResult {
  SplitPlan plan;
  MinMaxScaler scaler;
  TrainResult trained;
};

// Stratified folds, a scaler per fold and one trained model per fold. Fold f
// builds its model from derive_seed(cfg.seed, {f}).
std::vector<SplitPlan> make_fold_plans(const Dataset& data, const TrainConfig& cfg,
                                       const CvOptions& opts);
std::vector<FoldResult> cross_validate(const Dataset& data, const TrainConfig& cfg,
                                       const CvOptions& opts = {});

struct ClassifierConfig {
  std::vector<std::size_t> hidden{64, 64};
  double dropout = 0.5;
  bool batch_norm = true;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;
  double clip = 2.5;
};

struct Classifier {
  Mlp net;
  std::size_t epochs = 0;
  double best_valid_ce = 0.0;
};

// Latent -> class MLP, early-stopped on validation cross-entropy.
Classifier train_classifier(const Matrix& z_train, const std::vector<int>& y_train,
                            const Matrix& z_valid, const std::vector<int>& y_valid,
                            std::size_t classes, const ClassifierConfig& cfg, std::uint64_t seed);

std::vector<int> classify(const Classifier& clf, const Matrix& z);

// Classifier seed s of a fold.
std::uint64_t classifier_seed(std::uint64_t base_seed, std::size_t seed_index);

struct DownstreamRun {
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  double balanced_accuracy = 0.0;
  std::size_t epochs = 0;
};

// Posterior means of every split (all groups), then n_seeds classifiers
// scored by test balanced accuracy.
struct SplitLatents {
  Matrix train, valid, test;
};
SplitLatents split_latents(const EnVaeModel& model, const Matrix& x, const MinMaxScaler& scaler,
                           const SplitPlan& plan,
                           LatentReduction reduction = LatentReduction::poe_full);

std::vector<DownstreamRun> eval_downstream(const SplitLatents& z, const std::vector<int>& y,
                                           const SplitPlan& plan, std::size_t classes,
                                           const ClassifierConfig& cfg, std::size_t n_seeds,
                                           std::uint64_t base_seed);

}  // namespace envae

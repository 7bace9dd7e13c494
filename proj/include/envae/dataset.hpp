#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "envae/matrix.hpp"

namespace envae {

struct MinMaxScaler {
  std::vector<double> min;
  std::vector<double> max;
};

struct Dataset {
  Matrix x;                 // N x D
  std::vector<int> y;       // dense class indices 0..C-1
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;  // class index -> original label
  std::optional<MinMaxScaler> scaler;

  std::size_t samples() const { return x.rows(); }
  std::size_t features() const { return x.cols(); }
  std::size_t classes() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
};

// Header row required; every column except `label_column` must be numeric.
// Labels are mapped to dense indices, numerically ordered when every label
// is an integer and lexicographically otherwise. Throws DataError naming the
// offending row/column for empty files, missing columns, and non-numeric or
// NaN cells.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label");
Dataset parse_csv(const std::string& text, const std::string& label_column = "label");
void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column = "label");

// Per-feature min/max over the given rows.
MinMaxScaler fit_scaler(const Matrix& x, std::span<const std::size_t> rows);
// (x - min) / (max - min); constant features map to 0; no clipping.
Matrix apply_scaler(const MinMaxScaler& scaler, const Matrix& x);
// Uses data.scaler; throws DataError if it was never fitted.
Matrix apply_scaler(const Dataset& data);

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  int fold = -1;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

struct SplitFractions {
  double train = 0.72;
  double valid = 0.08;
  double test = 0.20;
};

// Splits `total` across classes in proportion to `counts`, rounding by
// largest remainder (ties to the lower class index).
std::vector<std::size_t> largest_remainder(std::span<const std::size_t> counts, std::size_t total);

// Per-class proportional train/valid/test split. Requires >= 3 samples per
// class; every class keeps at least one training sample.
SplitPlan stratified_split(std::span<const int> labels, std::size_t classes,
                           const SplitFractions& fractions, std::uint64_t seed);

// Stratified k folds; fold f tests on its own slice, validates on
// round(valid_fraction * N) samples drawn stratified from the rest, and
// trains on the remainder. Every class needs >= folds samples.
std::vector<SplitPlan> stratified_folds(std::span<const int> labels, std::size_t classes,
                                        std::size_t folds, double valid_fraction,
                                        std::uint64_t seed);

// Reduces the train set to n_target (stratified) and the valid set in the
// same proportion; the test set is left untouched.
SplitPlan subsample_train(const SplitPlan& plan, std::span<const int> labels,
                          std::size_t classes, std::size_t n_target, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t samples = 100;
  std::size_t features = 1000;
  std::size_t latent = 8;
  std::size_t classes = 4;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;
  // Optional D x latent loading matrix; rows are random unit vectors otherwise.
  std::optional<Matrix> loadings;
  bool zero_offset = false;
};

// Generating factors kept for oracle checks.
struct SyntheticData {
  Dataset data;
  Matrix factors;           // N x latent, z ~ N(0, I)
  Matrix loadings;          // D x latent
  std::vector<double> offset;
  Matrix class_directions;  // C x latent
};

// x = W z + b + noise, label = argmax_c <v_c, z>. With C <= latent the
// class directions are orthonormal, which makes the classes equiprobable.
SyntheticData synthetic_hdlss(const SyntheticSpec& spec);

// CSV with header sample_index,label,z_0..z_{L-1}.
void write_latents(const std::filesystem::path& path, std::span<const std::size_t> indices,
                   std::span<const int> labels, const Matrix& latents);

}  // namespace envae

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "envae/matrix.hpp"

namespace envae {

// Mean per-class recall over the classes present in y_true. `classes` of 0
// infers the class count from both vectors.
double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred,
                         std::size_t classes = 0);

struct LogDet {
  double log_det = 0.0;
  std::vector<double> log_diag;  // log of each diagonal entry of the jittered matrix
};

// Symmetrizes, adds jitter * I and factorizes with Cholesky.
LogDet covariance_logdet(const Matrix& sigma, double jitter = 1e-6);

// Sample covariance with divisor N - 1.
Matrix sample_covariance(const Matrix& x);

// Total correlation of the Gaussian fitted to the rows of `latents`:
// 0.5 * (sum_j log S_jj - log det S).
double estimate_tc(const Matrix& latents, double jitter = 1e-6);
double gaussian_tc(const Matrix& sigma, double jitter = 1e-6);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};
Summary summarize(std::span<const double> values);

}  // namespace envae

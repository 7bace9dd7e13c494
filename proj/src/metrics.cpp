#include "envae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "envae/error.hpp"

namespace envae {

double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred,
                         std::size_t classes) {
  if (y_true.size() != y_pred.size()) throw ShapeError("balanced_accuracy: length mismatch");
  if (y_true.empty()) throw DataError("balanced_accuracy: no samples");
  if (classes == 0) {
    for (int y : y_true) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(y) + 1);
    for (int y : y_pred) classes = std::max<std::size_t>(classes, static_cast<std::size_t>(y) + 1);
  }
  std::vector<std::size_t> total(classes, 0), hit(classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || static_cast<std::size_t>(y_true[i]) >= classes) {
      throw DataError("balanced_accuracy: label out of range");
    }
    ++total[static_cast<std::size_t>(y_true[i])];
    if (y_true[i] == y_pred[i]) ++hit[static_cast<std::size_t>(y_true[i])];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (total[c] == 0) continue;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return sum / static_cast<double>(present);
}

LogDet covariance_logdet(const Matrix& sigma, double jitter) {
  const std::size_t n = sigma.rows();
  if (sigma.cols() != n || n == 0) throw ShapeError("covariance_logdet needs a square matrix");
  require_finite(sigma, "covariance");
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (sigma(i, j) + sigma(j, i));
    a(i, i) += jitter;
  }
  LogDet out;
  for (std::size_t i = 0; i < n; ++i) out.log_diag.push_back(std::log(a(i, i)));
  // In-place Cholesky, lower triangle.
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) {
      double min_diag = a(0, 0);
      for (std::size_t i = 0; i < n; ++i) min_diag = std::min(min_diag, sigma(i, i));
      throw NumericError("covariance is not positive definite after jitter " +
                         std::to_string(jitter) + ": pivot " + std::to_string(j) + " is " +
                         std::to_string(d) + " (smallest eigenvalue <= " + std::to_string(d) +
                         ", smallest variance " + std::to_string(min_diag) + ")");
    }
    const double l = std::sqrt(d);
    a(j, j) = l;
    out.log_det += 2.0 * std::log(l);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  return out;
}

Matrix sample_covariance(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw DataError("covariance needs at least 2 rows");
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(r, j);
  }
  for (double& m : mean) m /= static_cast<double>(n);
  Matrix cov(d, d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = x(r, i) - mean[i];
      for (std::size_t j = i; j < d; ++j) cov(i, j) += di * (x(r, j) - mean[j]);
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) /= static_cast<double>(n - 1);
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

double gaussian_tc(const Matrix& sigma, double jitter) {
  const auto ld = covariance_logdet(sigma, jitter);
  double sum = 0.0;
  for (double v : ld.log_diag) sum += v;
  return 0.5 * (sum - ld.log_det);
}

double estimate_tc(const Matrix& latents, double jitter) {
  if (latents.rows() < latents.cols() + 1) {
    throw DataError("TC estimation needs at least L + 1 rows, got " +
                    std::to_string(latents.rows()) + " for L = " + std::to_string(latents.cols()));
  }
  return gaussian_tc(sample_covariance(latents), jitter);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace envae

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "envae/rng.hpp"

namespace envae {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

double clamp_log_var(double lv);

// Diagonal Gaussian N(mean, diag(exp(log_var))).
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  DiagGaussian() = default;
  // Validates finiteness and clamps log_var into [kLogVarMin, kLogVarMax].
  DiagGaussian(std::vector<double> mean, std::vector<double> log_var);

  // No clamping; used for closed-form fusion results, whose log-variance
  // may legitimately sit below the floor when several tight experts agree.
  static DiagGaussian exact(std::vector<double> mean, std::vector<double> log_var);
  static DiagGaussian standard(std::size_t dim);

  std::size_t dim() const { return mean.size(); }
};

// Equal-weight mixture of diagonal Gaussians sharing one dimension.
struct UniformMixture {
  std::vector<DiagGaussian> components;

  UniformMixture() = default;
  explicit UniformMixture(std::vector<DiagGaussian> components);

  std::size_t size() const { return components.size(); }
  std::size_t dim() const { return components.front().dim(); }
};

// Precision-weighted fusion of `count` experts over `dim` coordinates.
// Precision T = [1 if include_prior] + sum_i exp(-lv_i), mean = sum_i
// exp(-lv_i) mu_i / T, log_var = -log T. A single expert without the prior
// is copied through unchanged. Shared by the per-sample and batched paths.
void poe_fuse(std::span<const double* const> means, std::span<const double* const> log_vars,
              std::size_t dim, bool include_prior, double* out_mean, double* out_log_var);

// Throws ShapeError when `experts` is empty and include_prior is unset, or
// dimensions disagree. `dim` is only consulted for an empty expert list.
DiagGaussian poe_combine(std::span<const DiagGaussian> experts, bool include_prior,
                         std::size_t dim = 0);

// KL(q || N(0, I)) = 0.5 sum_l (mu^2 + sigma^2 - 1 - log sigma^2).
double kl_std_normal(const DiagGaussian& q);
double kl_std_normal(std::span<const double> mean, std::span<const double> log_var);

struct ReparamSample {
  std::vector<double> z;
  std::vector<double> eps;
};

// z = mu + exp(log_var / 2) * eps, eps ~ N(0, I).
ReparamSample reparam_sample(const DiagGaussian& q, Rng& rng);
std::vector<double> reparam_with(const DiagGaussian& q, std::span<const double> eps);

struct MixtureSample {
  std::size_t component = 0;
  std::vector<double> z;
};

MixtureSample mixture_sample(const UniformMixture& mix, Rng& rng);

// Diagonal Gaussian with the mixture's mean and per-dimension variance.
DiagGaussian moment_match(const UniformMixture& mix);

}  // namespace envae

#include "envae/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "envae/error.hpp"

namespace envae {

double clamp_log_var(double lv) { return std::clamp(lv, kLogVarMin, kLogVarMax); }

namespace {

void check_pair(const std::vector<double>& mean, const std::vector<double>& log_var) {
  if (mean.size() != log_var.size()) throw ShapeError("Gaussian mean/log_var length mismatch");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(log_var[i])) {
      throw NumericError("non-finite Gaussian parameter");
    }
  }
}

}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> lv)
    : mean(std::move(m)), log_var(std::move(lv)) {
  check_pair(mean, log_var);
  for (double& v : log_var) v = clamp_log_var(v);
}

DiagGaussian DiagGaussian::exact(std::vector<double> mean, std::vector<double> log_var) {
  check_pair(mean, log_var);
  DiagGaussian g;
  g.mean = std::move(mean);
  g.log_var = std::move(log_var);
  return g;
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return exact(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

UniformMixture::UniformMixture(std::vector<DiagGaussian> comps) : components(std::move(comps)) {
  if (components.empty()) throw ShapeError("mixture needs at least one component");
  for (const auto& c : components) {
    if (c.dim() != components.front().dim()) throw ShapeError("mixture components differ in dim");
  }
}

void poe_fuse(std::span<const double* const> means, std::span<const double* const> log_vars,
              std::size_t dim, bool include_prior, double* out_mean, double* out_log_var) {
  const std::size_t count = means.size();
  if (count == 1 && !include_prior) {
    std::copy(means[0], means[0] + dim, out_mean);
    std::copy(log_vars[0], log_vars[0] + dim, out_log_var);
    return;
  }
  for (std::size_t l = 0; l < dim; ++l) {
    double precision = include_prior ? 1.0 : 0.0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const double p = std::exp(-log_vars[i][l]);
      precision += p;
      weighted += p * means[i][l];
    }
    out_mean[l] = weighted / precision;
    out_log_var[l] = -std::log(precision);
  }
}

DiagGaussian poe_combine(std::span<const DiagGaussian> experts, bool include_prior,
                         std::size_t dim) {
  if (experts.empty() && !include_prior) {
    throw ShapeError("poe_combine: no experts and no prior");
  }
  if (!experts.empty()) dim = experts.front().dim();
  std::vector<const double*> means, log_vars;
  for (const auto& e : experts) {
    if (e.dim() != dim) throw ShapeError("poe_combine: experts differ in dim");
    means.push_back(e.mean.data());
    log_vars.push_back(e.log_var.data());
  }
  std::vector<double> mean(dim), log_var(dim);
  poe_fuse(means, log_vars, dim, include_prior, mean.data(), log_var.data());
  return DiagGaussian::exact(std::move(mean), std::move(log_var));
}

double kl_std_normal(std::span<const double> mean, std::span<const double> log_var) {
  double kl = 0.0;
  for (std::size_t l = 0; l < mean.size(); ++l) {
    kl += mean[l] * mean[l] + std::exp(log_var[l]) - 1.0 - log_var[l];
  }
  return 0.5 * kl;
}

double kl_std_normal(const DiagGaussian& q) { return kl_std_normal(q.mean, q.log_var); }

std::vector<double> reparam_with(const DiagGaussian& q, std::span<const double> eps) {
  if (eps.size() != q.dim()) throw ShapeError("reparam: eps length mismatch");
  std::vector<double> z(q.dim());
  for (std::size_t l = 0; l < q.dim(); ++l) z[l] = q.mean[l] + std::exp(0.5 * q.log_var[l]) * eps[l];
  return z;
}

ReparamSample reparam_sample(const DiagGaussian& q, Rng& rng) {
  ReparamSample s;
  s.eps.resize(q.dim());
  for (double& e : s.eps) e = rng.normal();
  s.z = reparam_with(q, s.eps);
  return s;
}

MixtureSample mixture_sample(const UniformMixture& mix, Rng& rng) {
  if (mix.components.empty()) throw ShapeError("mixture_sample: empty mixture");
  MixtureSample s;
  s.component = rng.uniform_index(mix.size());
  s.z = reparam_sample(mix.components[s.component], rng).z;
  return s;
}

DiagGaussian moment_match(const UniformMixture& mix) {
  if (mix.components.empty()) throw ShapeError("moment_match: empty mixture");
  const std::size_t dim = mix.dim();
  const double k = static_cast<double>(mix.size());
  std::vector<double> mean(dim, 0.0), second(dim, 0.0);
  for (const auto& c : mix.components) {
    for (std::size_t l = 0; l < dim; ++l) {
      mean[l] += c.mean[l] / k;
      second[l] += (std::exp(c.log_var[l]) + c.mean[l] * c.mean[l]) / k;
    }
  }
  std::vector<double> log_var(dim);
  for (std::size_t l = 0; l < dim; ++l) {
    log_var[l] = std::log(std::max(second[l] - mean[l] * mean[l], 1e-300));
  }
  return DiagGaussian::exact(std::move(mean), std::move(log_var));
}

}  // namespace envae

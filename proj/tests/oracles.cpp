#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "envae/gaussian.hpp"

namespace oracle {

using namespace envae;

double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                     double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

namespace {

constexpr double kStep = 1e-6;

double weighted_sum(const Matrix& a, const Matrix& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * w.data()[k];
  return s;
}

}  // namespace

double mlp_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  MlpShape shape;
  shape.input = 2 + rng.uniform_index(4);
  const std::size_t depth = 1 + rng.uniform_index(2);
  for (std::size_t i = 0; i < depth; ++i) shape.hidden.push_back(2 + rng.uniform_index(5));
  shape.output = 1 + rng.uniform_index(4);
  shape.batch_norm = rng.uniform() < 0.5;
  shape.dropout = rng.uniform() < 0.5 ? 0.3 : 0.0;
  Mlp mlp = Mlp::build(shape, rng);
  // Non-trivial batch-norm affine parameters.
  for (auto& l : mlp.layers()) {
    if (!l.batch_norm) continue;
    for (double& g : l.batch_norm->gamma) g = 0.5 + rng.uniform();
    for (double& b : l.batch_norm->beta) b = rng.normal() * 0.3;
  }
  for (auto& l : mlp.layers()) {
    for (double& b : l.bias) b = 0.1 * rng.normal();
  }
  const std::size_t batch = 3 + rng.uniform_index(4);
  Matrix x(batch, shape.input), g(batch, shape.output);
  for (double& v : x.data()) v = rng.normal();
  for (double& v : g.data()) v = rng.normal();
  const std::uint64_t mask_seed = rng.next_u64();

  auto loss = [&](Mlp& net, const Matrix& in) {
    Rng r(mask_seed);
    return weighted_sum(mlp_forward(net, in, Mode::train, r).output, g);
  };
  Rng r(mask_seed);
  Mlp probe = mlp;
  auto fwd = mlp_forward(probe, x, Mode::train, r);
  const auto back = mlp_backward(mlp, fwd.cache, g);

  std::vector<double> analytic, numeric;
  Mlp work = mlp;
  auto params = work.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + kStep;
      const double up = loss(work, x);
      params[t][i] = saved - kStep;
      const double down = loss(work, x);
      params[t][i] = saved;
      analytic.push_back(back.param_grads[t][i]);
      numeric.push_back((up - down) / (2 * kStep));
    }
  }
  Matrix xp = x;
  for (std::size_t k = 0; k < xp.size(); ++k) {
    const double saved = xp.data()[k];
    xp.data()[k] = saved + kStep;
    const double up = loss(work, xp);
    xp.data()[k] = saved - kStep;
    const double down = loss(work, xp);
    xp.data()[k] = saved;
    analytic.push_back(back.input_grad.data()[k]);
    numeric.push_back((up - down) / (2 * kStep));
  }
  return max_rel_error(analytic, numeric);
}

double model_gradient_error(EnVaeModel model, const Matrix& x, const std::vector<int>* labels,
                            double beta, std::uint64_t noise_seed) {
  auto loss = [&](EnVaeModel& m) {
    Rng r(noise_seed);
    return compute_loss(m, x, labels, beta, r, Mode::train, false).total;
  };
  EnVaeModel probe = model;
  Rng r(noise_seed);
  const auto result = compute_loss(probe, x, labels, beta, r, Mode::train, true);
  std::vector<double> analytic, numeric;
  auto params = model.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + kStep;
      const double up = loss(model);
      params[t][i] = saved - kStep;
      const double down = loss(model);
      params[t][i] = saved;
      analytic.push_back(result.grads[t][i]);
      numeric.push_back((up - down) / (2 * kStep));
    }
  }
  return max_rel_error(analytic, numeric);
}

Moments grid_product(double m1, double v1, double m2, double v2, std::size_t points, double lo,
                     double hi) {
  const double step = (hi - lo) / static_cast<double>(points - 1);
  double mass = 0.0, first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const double z = lo + step * static_cast<double>(i);
    const double p = std::exp(-0.5 * (z - m1) * (z - m1) / v1 - 0.5 * (z - m2) * (z - m2) / v2);
    mass += p;
    first += p * z;
  }
  const double mean = first / mass;
  for (std::size_t i = 0; i < points; ++i) {
    const double z = lo + step * static_cast<double>(i);
    const double p = std::exp(-0.5 * (z - m1) * (z - m1) / v1 - 0.5 * (z - m2) * (z - m2) / v2);
    second += p * (z - mean) * (z - mean);
  }
  return {mean, second / mass};
}

Estimate mc_kl(const std::vector<double>& mean, const std::vector<double>& log_var,
               std::size_t samples, Rng& rng) {
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t l = 0; l < mean.size(); ++l) {
      const double sd = std::exp(0.5 * log_var[l]);
      const double e = rng.normal();
      const double z = mean[l] + sd * e;
      // log q - log p; the 2 pi terms cancel.
      log_ratio += -0.5 * e * e - 0.5 * log_var[l] + 0.5 * z * z;
    }
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double n = static_cast<double>(samples);
  const double m = sum / n;
  const double var = (sum_sq - n * m * m) / (n - 1);
  return {m, std::sqrt(var / n)};
}

double cofactor_det(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  double det = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    Matrix minor(n - 1, n - 1);
    for (std::size_t r = 1; r < n; ++r) {
      std::size_t cc = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == c) continue;
        minor(r - 1, cc++) = a(r, k);
      }
    }
    det += (c % 2 == 0 ? 1.0 : -1.0) * a(0, c) * cofactor_det(minor);
  }
  return det;
}

double reference_vae_loss(Mlp encoder, Mlp decoder, const Matrix& x, double beta, Rng& rng) {
  const std::size_t batch = x.rows();
  const std::size_t latent = encoder.output_width() / 2;
  const Matrix h = mlp_forward(encoder, x, Mode::train, rng).output;
  Matrix z(batch, latent);
  double kl = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < latent; ++l) {
      const double mu = h(b, l);
      const double lv = std::clamp(h(b, latent + l), -10.0, 10.0);
      kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
      z(b, l) = mu + std::exp(0.5 * lv) * rng.normal();
    }
  }
  const Matrix xhat = mlp_forward(decoder, z, Mode::train, rng).output;
  double se = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = xhat.data()[k] - x.data()[k];
    se += d * d;
  }
  return se / static_cast<double>(batch) + beta * kl / static_cast<double>(batch);
}

}  // namespace oracle

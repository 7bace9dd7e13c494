#include "envae/optim.hpp"

#include <cmath>

#include "envae/error.hpp"

namespace envae {

void adam_step(std::span<const std::span<double>> params, const Gradients& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) throw ShapeError("adam: tensor size mismatch");
    for (double g : grads[k]) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient entry");
    }
  }
  if (state.m.empty() && state.t == 0) {
    for (const auto& g : grads) {
      state.m.emplace_back(g.size(), 0.0);
      state.v.emplace_back(g.size(), 0.0);
    }
  }
  if (state.m.size() != grads.size()) throw ShapeError("adam: state does not match parameters");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (state.m[k].size() != grads[k].size() || state.v[k].size() != grads[k].size()) {
      throw ShapeError("adam: state tensor size mismatch");
    }
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    double* p = params[k].data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g) x *= scale;
    }
  }
  return norm;
}

}  // namespace envae

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "envae/mlp.hpp"

namespace envae {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
// A fresh (empty) state is sized on first use. Throws NumericError on a
// non-finite gradient entry, before touching any parameter.
void adam_step(std::span<const std::span<double>> params, const Gradients& grads,
               AdamState& state, const AdamConfig& cfg = {});

double global_norm(const Gradients& grads);

// Scales every entry by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clipping norm.
double clip_global_norm(Gradients& grads, double max_norm = 2.5);

}  // namespace envae

#include "envae/mlp.hpp"

#include <cmath>
#include <string>

#include "envae/error.hpp"

namespace envae {

BatchNorm::BatchNorm(std::size_t width)
    : running_mean(width, 0.0), running_var(width, 1.0), gamma(width, 1.0), beta(width, 0.0) {}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.bias.size() != l.out()) throw ShapeError("layer " + std::to_string(i) + ": bias width");
    if (i > 0 && layers_[i - 1].out() != l.in()) {
      throw ShapeError("layer " + std::to_string(i) + ": input width does not chain");
    }
    if (l.dropout < 0.0 || l.dropout >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (l.batch_norm) {
      const auto& bn = *l.batch_norm;
      if (bn.gamma.size() != l.out() || bn.beta.size() != l.out() ||
          bn.running_mean.size() != l.out() || bn.running_var.size() != l.out()) {
        throw ShapeError("layer " + std::to_string(i) + ": batch-norm width");
      }
      for (double v : bn.running_var) {
        if (!(v > 0.0)) throw NumericError("batch-norm running variance must be positive");
      }
    }
  }
}

Mlp Mlp::build(const MlpShape& shape, Rng& rng) {
  std::vector<std::size_t> widths{shape.input};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(shape.output);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("MLP widths must be positive");
    Layer l;
    l.weight = Matrix(out, in);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : l.weight.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
    l.bias.assign(out, 0.0);
    const bool hidden = i + 2 < widths.size();
    if (hidden) {
      l.activation = Activation::relu;
      if (shape.batch_norm) l.batch_norm = BatchNorm(out);
      l.dropout = shape.dropout;
    }
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_width() const { return layers_.empty() ? 0 : layers_.front().in(); }
std::size_t Mlp::output_width() const { return layers_.empty() ? 0 : layers_.back().out(); }

std::vector<std::span<double>> Mlp::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
    if (l.batch_norm) {
      out.emplace_back(l.batch_norm->gamma);
      out.emplace_back(l.batch_norm->beta);
    }
  }
  return out;
}

std::vector<std::span<const double>> Mlp::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
    if (l.batch_norm) {
      out.emplace_back(l.batch_norm->gamma);
      out.emplace_back(l.batch_norm->beta);
    }
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

bool Mlp::uses_batch_norm() const {
  for (const auto& l : layers_) {
    if (l.batch_norm) return true;
  }
  return false;
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& x = a.layers_[i];
    const Layer& y = b.layers_[i];
    if (x.weight != y.weight || x.bias != y.bias || x.activation != y.activation ||
        x.dropout != y.dropout || x.batch_norm.has_value() != y.batch_norm.has_value()) {
      return false;
    }
    if (x.batch_norm) {
      const auto& p = *x.batch_norm;
      const auto& q = *y.batch_norm;
      if (p.running_mean != q.running_mean || p.running_var != q.running_var ||
          p.gamma != q.gamma || p.beta != q.beta || p.momentum != q.momentum || p.eps != q.eps) {
        return false;
      }
    }
  }
  return true;
}

std::size_t mlp_parameter_count(const MlpShape& shape) {
  std::vector<std::size_t> widths{shape.input};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(shape.output);
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    n += widths[i] * widths[i + 1] + widths[i + 1];
    if (shape.batch_norm && i + 2 < widths.size()) n += 2 * widths[i + 1];
  }
  return n;
}

namespace {

// out = x * w^T + b
Matrix affine(const Matrix& x, const Layer& l) {
  const std::size_t batch = x.rows();
  const std::size_t in = l.in();
  const std::size_t out = l.out();
  std::vector<double> wt(in * out);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = l.weight(o, i);
  }
  Matrix y(batch, out);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data().data() + b * in;
    double* yr = y.data().data() + b * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = l.bias[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      if (xv == 0.0) continue;
      const double* wr = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

Matrix forward_layer(Layer& l, const Matrix& x, Mode mode, Rng& rng, LayerCache* cache) {
  if (x.cols() != l.in()) {
    throw ShapeError("layer expects " + std::to_string(l.in()) + " inputs, got " +
                     std::to_string(x.cols()));
  }
  const std::size_t batch = x.rows();
  const std::size_t out = l.out();
  Matrix z = affine(x, l);
  Matrix a = z;
  if (l.activation == Activation::relu) {
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  }
  if (l.batch_norm) {
    BatchNorm& bn = *l.batch_norm;
    if (mode == Mode::train) {
      if (batch < 2) throw ShapeError("train-mode batch norm needs a batch of at least 2 rows");
      std::vector<double> mean(out, 0.0), var(out, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < out; ++j) mean[j] += a(b, j);
      }
      for (double& m : mean) m /= static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < out; ++j) {
          const double d = a(b, j) - mean[j];
          var[j] += d * d;
        }
      }
      std::vector<double> inv_std(out);
      const double n = static_cast<double>(batch);
      for (std::size_t j = 0; j < out; ++j) {
        const double biased = var[j] / n;
        inv_std[j] = 1.0 / std::sqrt(biased + bn.eps);
        bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
        bn.running_var[j] =
            (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j] / (n - 1.0);
      }
      Matrix xhat(batch, out);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < out; ++j) {
          xhat(b, j) = (a(b, j) - mean[j]) * inv_std[j];
          a(b, j) = bn.gamma[j] * xhat(b, j) + bn.beta[j];
        }
      }
      if (cache) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
      }
    } else {
      std::vector<double> inv_std(out);
      for (std::size_t j = 0; j < out; ++j) inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
      Matrix xhat(batch, out);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < out; ++j) {
          xhat(b, j) = (a(b, j) - bn.running_mean[j]) * inv_std[j];
          a(b, j) = bn.gamma[j] * xhat(b, j) + bn.beta[j];
        }
      }
      if (cache) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
      }
    }
  }
  if (mode == Mode::train && l.dropout > 0.0) {
    Matrix mask(batch, out);
    const double keep_scale = 1.0 / (1.0 - l.dropout);
    for (std::size_t k = 0; k < mask.size(); ++k) {
      mask.data()[k] = rng.uniform() >= l.dropout ? keep_scale : 0.0;
      a.data()[k] *= mask.data()[k];
    }
    if (cache) cache->dropout_mask = std::move(mask);
  }
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(z);
  }
  return a;
}

}  // namespace

ForwardResult mlp_forward(Mlp& mlp, const Matrix& batch, Mode mode, Rng& rng) {
  if (mlp.layers().empty()) throw ShapeError("empty MLP");
  if (batch.rows() == 0) throw ShapeError("empty batch");
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.layers.resize(mlp.layers().size());
  Matrix h = batch;
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    h = forward_layer(mlp.layers()[i], h, mode, rng, &result.cache.layers[i]);
  }
  require_finite(h, "MLP output");
  result.output = std::move(h);
  return result;
}

Matrix mlp_eval(const Mlp& mlp, const Matrix& batch) {
  if (mlp.layers().empty()) throw ShapeError("empty MLP");
  if (batch.rows() == 0) throw ShapeError("empty batch");
  Rng unused(0);
  Matrix h = batch;
  for (const Layer& l : mlp.layers()) {
    // Eval mode never writes to the layer.
    h = forward_layer(const_cast<Layer&>(l), h, Mode::eval, unused, nullptr);
  }
  require_finite(h, "MLP output");
  return h;
}

Gradients zero_gradients(const Mlp& mlp) {
  Gradients g;
  for (const auto& p : mlp.parameters()) g.emplace_back(p.size(), 0.0);
  return g;
}

BackwardResult mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& output_grad,
                            bool want_input_grad) {
  const auto& layers = mlp.layers();
  if (cache.layers.size() != layers.size()) throw ShapeError("cache does not match MLP depth");
  const std::size_t batch = cache.layers.front().input.rows();
  if (output_grad.rows() != batch || output_grad.cols() != mlp.output_width()) {
    throw ShapeError("output gradient shape does not match forward output");
  }

  // Per-layer gradient blocks, assembled in parameters() order at the end.
  std::vector<std::vector<std::vector<double>>> blocks(layers.size());
  Matrix grad = output_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& l = layers[li];
    const LayerCache& c = cache.layers[li];
    const std::size_t in = l.in();
    const std::size_t out = l.out();
    if (c.input.cols() != in || c.input.rows() != batch) throw ShapeError("cache shape mismatch");

    if (!c.dropout_mask.empty()) {
      for (std::size_t k = 0; k < grad.size(); ++k) grad.data()[k] *= c.dropout_mask.data()[k];
    }
    std::vector<double> dgamma, dbeta;
    if (l.batch_norm) {
      const BatchNorm& bn = *l.batch_norm;
      dgamma.assign(out, 0.0);
      dbeta.assign(out, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < out; ++j) {
          dgamma[j] += grad(b, j) * c.normalized(b, j);
          dbeta[j] += grad(b, j);
        }
      }
      if (cache.mode == Mode::train) {
        // d/dA of gamma * (A - mean(A)) / std(A) through the batch statistics.
        const double n = static_cast<double>(batch);
        for (std::size_t j = 0; j < out; ++j) {
          const double sum_dxhat = dbeta[j] * bn.gamma[j];
          const double sum_dxhat_xhat = dgamma[j] * bn.gamma[j];
          for (std::size_t b = 0; b < batch; ++b) {
            const double dxhat = grad(b, j) * bn.gamma[j];
            grad(b, j) = c.inv_std[j] / n *
                         (n * dxhat - sum_dxhat - c.normalized(b, j) * sum_dxhat_xhat);
          }
        }
      } else {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < out; ++j) grad(b, j) *= bn.gamma[j] * c.inv_std[j];
        }
      }
    }
    if (l.activation == Activation::relu) {
      for (std::size_t k = 0; k < grad.size(); ++k) {
        if (!(c.pre_activation.data()[k] > 0.0)) grad.data()[k] = 0.0;
      }
    }

    std::vector<double> dw(out * in, 0.0), db(out, 0.0);
    Matrix dx(batch, in);
    const double* w = l.weight.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xr = c.input.data().data() + b * in;
      const double* gr = grad.data().data() + b * out;
      double* dxr = dx.data().data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gr[o];
        if (g == 0.0) continue;
        db[o] += g;
        double* dwr = dw.data() + o * in;
        const double* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
        if (li > 0 || want_input_grad) {
          for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
        }
      }
    }
    auto& blk = blocks[li];
    blk.push_back(std::move(dw));
    blk.push_back(std::move(db));
    if (l.batch_norm) {
      blk.push_back(std::move(dgamma));
      blk.push_back(std::move(dbeta));
    }
    grad = std::move(dx);
  }

  BackwardResult result;
  for (auto& blk : blocks) {
    for (auto& t : blk) result.param_grads.push_back(std::move(t));
  }
  result.input_grad = std::move(grad);
  return result;
}

}  // namespace envae

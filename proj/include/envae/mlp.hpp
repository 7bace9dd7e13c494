#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "envae/matrix.hpp"
#include "envae/rng.hpp"

namespace envae {

enum class Mode { train, eval };
enum class Activation { relu, linear };

// Per-feature batch normalization applied after the activation.
struct BatchNorm {
  std::vector<double> running_mean;
  std::vector<double> running_var;  // strictly positive
  std::vector<double> gamma;
  std::vector<double> beta;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t width);
};

// One dense layer: affine -> activation -> [batch norm] -> [dropout].
struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::linear;
  std::optional<BatchNorm> batch_norm;
  double dropout = 0.0;  // in [0, 1)

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

struct MlpShape {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
  bool batch_norm = true;
  double dropout = 0.0;
};

// Hidden layers are relu + optional batch norm + dropout; the output layer is
// a plain affine map.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp build(const MlpShape& shape, Rng& rng);

  std::size_t input_width() const;
  std::size_t output_width() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  // Trainable tensors, per layer: weight, bias, then gamma and beta when the
  // layer has batch norm. Gradients use the same order.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  std::size_t parameter_count() const;

  bool uses_batch_norm() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<Layer> layers_;
};

// Exact trainable-parameter count of an MLP with the given shape.
std::size_t mlp_parameter_count(const MlpShape& shape);

using Gradients = std::vector<std::vector<double>>;

struct LayerCache {
  Matrix input;
  Matrix pre_activation;
  Matrix normalized;            // batch-norm x-hat
  std::vector<double> inv_std;  // batch-norm 1/sqrt(var + eps)
  Matrix dropout_mask;          // 0 or 1/(1-p); empty when unused
};

struct MlpCache {
  Mode mode = Mode::eval;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix output;
  MlpCache cache;
};

struct BackwardResult {
  Gradients param_grads;
  Matrix input_grad;
};

// Train mode samples dropout masks from `rng` and updates batch-norm running
// statistics in place; eval mode touches neither.
ForwardResult mlp_forward(Mlp& mlp, const Matrix& batch, Mode mode, Rng& rng);

// Eval-mode forward without a cache. Safe to call concurrently.
Matrix mlp_eval(const Mlp& mlp, const Matrix& batch);

// Reverse-mode gradients of sum_b <output_grad_b, output_b>. input_grad is
// left zero when want_input_grad is false.
BackwardResult mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& output_grad,
                            bool want_input_grad = true);

Gradients zero_gradients(const Mlp& mlp);

}  // namespace envae

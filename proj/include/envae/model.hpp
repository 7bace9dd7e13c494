#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "envae/gaussian.hpp"
#include "envae/grouping.hpp"
#include "envae/matrix.hpp"
#include "envae/mlp.hpp"
#include "envae/rng.hpp"

namespace envae {

enum class ElboMode { full_enumeration, mixture_sample };
enum class LatentReduction { poe_full, mixture_mean };

std::string to_string(ElboMode mode);
ElboMode parse_elbo_mode(const std::string& text);
std::string to_string(LatentReduction r);
LatentReduction parse_latent_reduction(const std::string& text);

// Subsets are bitmasks over groups; bit i set means group i is present.
using GroupMask = std::uint32_t;

// Largest m for which every one of the 2^m - 1 subsets is enumerated.
inline constexpr std::size_t kMaxEnumeratedGroups = 8;

// All non-empty sub-masks of `available`, ascending.
std::vector<GroupMask> nonempty_subsets(GroupMask available);
GroupMask all_groups_mask(std::size_t groups);

// full_enumeration for m <= 4, mixture_sample above.
ElboMode default_elbo_mode(std::size_t groups);

struct ModelConfig {
  std::size_t latent_dim = 16;
  std::size_t experts = 1;
  std::vector<std::size_t> baseline_hidden{128, 128};
  // Per-expert hidden widths; empty means "match the baseline budget".
  std::vector<std::size_t> hidden;
  double beta = 1.0;
  bool include_prior = true;
  std::optional<ElboMode> elbo_mode;  // unset: default_elbo_mode(experts)
  std::size_t mixture_samples = 1;
  bool batch_norm = true;
  double dropout = 0.5;
  // Classifier head; disabled when classes == 0.
  std::size_t classes = 0;
  std::vector<std::size_t> head_hidden{64, 64};
  double head_dropout = 0.5;
};

// A batch of diagonal Gaussians, one per row.
struct GaussianBatch {
  Matrix mean;     // B x L
  Matrix log_var;  // B x L

  std::size_t rows() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }
  DiagGaussian row(std::size_t r) const;
};

struct EnVaeModel {
  FeatureGrouping grouping;
  std::size_t latent_dim = 0;
  std::vector<Mlp> encoders;  // d_i -> hidden -> 2L (mean | log_var)
  std::vector<Mlp> decoders;  // L -> hidden -> d_i
  double beta = 1.0;
  bool include_prior = true;
  ElboMode elbo_mode = ElboMode::full_enumeration;
  std::size_t mixture_samples = 1;
  std::optional<Mlp> head;  // L -> classes

  // Grouping, encoders, decoders and head all draw from sub-streams of `seed`.
  static EnVaeModel build(const ModelConfig& cfg, std::size_t features, std::uint64_t seed);

  std::size_t groups() const { return grouping.groups; }
  std::size_t features() const { return grouping.features; }

  // Encoders, then decoders, then the head; gradients follow the same order.
  std::vector<std::span<double>> parameters();
  std::size_t parameter_count() const;
  // Checks the structural invariants; throws ShapeError/ConfigError.
  void validate() const;

  friend bool operator==(const EnVaeModel& a, const EnVaeModel& b);
};

// Row-major slice of the columns owned by group g.
Matrix slice_group(const EnVaeModel& model, const Matrix& x, std::size_t group);
// Writes a group's columns back into their original positions of `out`.
void scatter_group(const EnVaeModel& model, const Matrix& part, std::size_t group, Matrix& out);

// Eval-mode posterior of every group. Only groups in `available` are read;
// the others come back empty.
std::vector<GaussianBatch> encode_groups(const EnVaeModel& model, const Matrix& x,
                                         GroupMask available);
std::vector<GaussianBatch> encode_groups(const EnVaeModel& model, const Matrix& x);

struct SubsetPosteriors {
  std::vector<GroupMask> masks;
  std::vector<GaussianBatch> posteriors;

  std::size_t size() const { return masks.size(); }
  const GaussianBatch& at(GroupMask mask) const;
};

// PoE posterior of every non-empty subset of `available`.
SubsetPosteriors subset_posteriors(std::span<const GaussianBatch> groups, GroupMask available,
                                   bool include_prior);

// Uniform mixture over every stored subset posterior, for one sample row.
UniformMixture joint_posterior(const SubsetPosteriors& subsets, std::size_t row);

// Eval-mode decode of latents into the original feature order.
Matrix decode_all(const EnVaeModel& model, const Matrix& z);

struct LossResult {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double cross_entropy = 0.0;
  Gradients grads;  // empty unless requested
};

// Reconstruction (squared error summed over features, averaged over rows)
// plus beta times the KL averaged over subset posteriors. full_enumeration
// decodes a sample from every subset; mixture_sample draws
// model.mixture_samples subsets per row uniformly. When labels are given
// and the model has a head, the cross-entropy of the head on a sample of the
// all-groups posterior is added.
LossResult compute_loss(EnVaeModel& model, const Matrix& x, const std::vector<int>* labels,
                        double beta, Rng& rng, Mode mode, bool want_grads);

inline LossResult elbo_loss(EnVaeModel& model, const Matrix& x, double beta, Rng& rng, Mode mode,
                            bool want_grads = true) {
  return compute_loss(model, x, nullptr, beta, rng, mode, want_grads);
}

// Eval-mode latent posterior given only the groups in `available`. An empty
// mask yields N(0, I) when the prior is on and throws ConfigError otherwise.
GaussianBatch infer_latent(const EnVaeModel& model, const Matrix& x, GroupMask available,
                           LatentReduction reduction = LatentReduction::poe_full);

struct SupervisedOutput {
  Matrix logits;
  GaussianBatch latent;
};

// Head logits from the all-groups posterior: its mean in eval mode, a
// reparameterized sample in train mode.
SupervisedOutput supervised_forward(EnVaeModel& model, const Matrix& x, Mode mode, Rng& rng);

// Mean softmax cross-entropy and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix* grad = nullptr);
std::vector<int> argmax_rows(const Matrix& logits);

}  // namespace envae

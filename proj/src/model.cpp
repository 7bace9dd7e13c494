#include "envae/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "envae/error.hpp"

namespace envae {

std::string to_string(ElboMode mode) {
  return mode == ElboMode::full_enumeration ? "full_enumeration" : "mixture_sample";
}

ElboMode parse_elbo_mode(const std::string& text) {
  if (text == "full_enumeration") return ElboMode::full_enumeration;
  if (text == "mixture_sample") return ElboMode::mixture_sample;
  throw ConfigError("unknown elbo_mode '" + text + "' (full_enumeration|mixture_sample)");
}

std::string to_string(LatentReduction r) {
  return r == LatentReduction::poe_full ? "poe_full" : "mixture_mean";
}

LatentReduction parse_latent_reduction(const std::string& text) {
  if (text == "poe_full") return LatentReduction::poe_full;
  if (text == "mixture_mean") return LatentReduction::mixture_mean;
  throw ConfigError("unknown latent reduction '" + text + "' (poe_full|mixture_mean)");
}

std::vector<GroupMask> nonempty_subsets(GroupMask available) {
  std::vector<GroupMask> out;
  // Enumerate sub-masks descending, then reverse.
  for (GroupMask s = available; s != 0; s = (s - 1) & available) out.push_back(s);
  std::reverse(out.begin(), out.end());
  return out;
}

GroupMask all_groups_mask(std::size_t groups) {
  if (groups == 0 || groups > 31) throw ConfigError("group count must be in [1, 31]");
  return static_cast<GroupMask>((1u << groups) - 1u);
}

ElboMode default_elbo_mode(std::size_t groups) {
  return groups <= 4 ? ElboMode::full_enumeration : ElboMode::mixture_sample;
}

DiagGaussian GaussianBatch::row(std::size_t r) const {
  auto m = mean.row(r);
  auto v = log_var.row(r);
  return DiagGaussian::exact({m.begin(), m.end()}, {v.begin(), v.end()});
}

const GaussianBatch& SubsetPosteriors::at(GroupMask mask) const {
  auto it = std::lower_bound(masks.begin(), masks.end(), mask);
  if (it == masks.end() || *it != mask) throw ShapeError("subset not present in posterior table");
  return posteriors[static_cast<std::size_t>(it - masks.begin())];
}

// ---------------------------------------------------------------------------
// Construction

EnVaeModel EnVaeModel::build(const ModelConfig& cfg, std::size_t features, std::uint64_t seed) {
  if (cfg.latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (cfg.beta < 0.0) throw ConfigError("beta must be >= 0");
  if (cfg.mixture_samples == 0) throw ConfigError("mixture_samples must be positive");
  EnVaeModel model;
  model.grouping = make_grouping(features, cfg.experts, derive_seed(seed, {1}));
  model.latent_dim = cfg.latent_dim;
  model.beta = cfg.beta;
  model.include_prior = cfg.include_prior;
  model.elbo_mode = cfg.elbo_mode.value_or(default_elbo_mode(cfg.experts));
  model.mixture_samples = cfg.mixture_samples;
  if (model.elbo_mode == ElboMode::full_enumeration && cfg.experts > kMaxEnumeratedGroups) {
    throw ConfigError("full_enumeration with m=" + std::to_string(cfg.experts) +
                      " needs 2^m-1 decoder passes per batch; use mixture_sample for m > 8");
  }
  const auto hidden = cfg.hidden.empty()
                          ? expert_widths_for_budget(features, cfg.latent_dim, cfg.experts,
                                                     cfg.baseline_hidden, cfg.batch_norm)
                          : cfg.hidden;
  Rng rng(derive_seed(seed, {2}));
  for (std::size_t g = 0; g < cfg.experts; ++g) {
    const std::size_t d = model.grouping.group_size(g);
    model.encoders.push_back(
        Mlp::build({d, hidden, 2 * cfg.latent_dim, cfg.batch_norm, cfg.dropout}, rng));
    model.decoders.push_back(Mlp::build({cfg.latent_dim, hidden, d, cfg.batch_norm, cfg.dropout}, rng));
  }
  if (cfg.classes > 0) {
    Rng head_rng(derive_seed(seed, {3}));
    model.head = Mlp::build(
        {cfg.latent_dim, cfg.head_hidden, cfg.classes, cfg.batch_norm, cfg.head_dropout}, head_rng);
  }
  model.validate();
  return model;
}

std::vector<std::span<double>> EnVaeModel::parameters() {
  std::vector<std::span<double>> out;
  for (auto& e : encoders) {
    auto p = e.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  for (auto& d : decoders) {
    auto p = d.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (head) {
    auto p = head->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t EnVaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : encoders) n += e.parameter_count();
  for (const auto& d : decoders) n += d.parameter_count();
  if (head) n += head->parameter_count();
  return n;
}

void EnVaeModel::validate() const {
  const std::size_t m = grouping.groups;
  if (encoders.size() != m || decoders.size() != m) throw ShapeError("one encoder/decoder per group");
  if (m > 31) throw ConfigError("at most 31 groups are supported");
  for (std::size_t g = 0; g < m; ++g) {
    const std::size_t d = grouping.group_size(g);
    if (encoders[g].input_width() != d || encoders[g].output_width() != 2 * latent_dim) {
      throw ShapeError("encoder " + std::to_string(g) + " widths do not match its group");
    }
    if (decoders[g].input_width() != latent_dim || decoders[g].output_width() != d) {
      throw ShapeError("decoder " + std::to_string(g) + " widths do not match its group");
    }
  }
  if (head && head->input_width() != latent_dim) throw ShapeError("head input must be the latent");
  if (elbo_mode == ElboMode::full_enumeration && m > kMaxEnumeratedGroups) {
    throw ConfigError("full_enumeration requires m <= 8");
  }
}

bool operator==(const EnVaeModel& a, const EnVaeModel& b) {
  return a.grouping == b.grouping && a.latent_dim == b.latent_dim && a.encoders == b.encoders &&
         a.decoders == b.decoders && a.beta == b.beta && a.include_prior == b.include_prior &&
         a.elbo_mode == b.elbo_mode && a.mixture_samples == b.mixture_samples &&
         a.head == b.head;
}

// ---------------------------------------------------------------------------
// Slicing

Matrix slice_group(const EnVaeModel& model, const Matrix& x, std::size_t group) {
  return x.select_cols(model.grouping.members[group]);
}

void scatter_group(const EnVaeModel& model, const Matrix& part, std::size_t group, Matrix& out) {
  const auto& cols = model.grouping.members[group];
  if (part.cols() != cols.size() || part.rows() != out.rows()) {
    throw ShapeError("scatter_group: shape mismatch");
  }
  for (std::size_t r = 0; r < part.rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(r, cols[j]) = part(r, j);
  }
}

namespace {

void require_columns(const EnVaeModel& model, const Matrix& x) {
  if (x.cols() != model.features()) {
    throw ShapeError("expected " + std::to_string(model.features()) + " feature columns, got " +
                     std::to_string(x.cols()));
  }
}

// Splits an encoder output row-block into mean and clamped log-variance.
GaussianBatch split_encoder_output(const Matrix& out, std::size_t latent) {
  GaussianBatch g{Matrix(out.rows(), latent), Matrix(out.rows(), latent)};
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t l = 0; l < latent; ++l) {
      g.mean(r, l) = out(r, l);
      g.log_var(r, l) = clamp_log_var(out(r, latent + l));
    }
  }
  return g;
}

GaussianBatch fuse_batch(std::span<const GaussianBatch> groups, GroupMask mask, bool include_prior,
                         std::size_t rows, std::size_t latent) {
  GaussianBatch out{Matrix(rows, latent), Matrix(rows, latent)};
  std::vector<const double*> means, lvs;
  for (std::size_t r = 0; r < rows; ++r) {
    means.clear();
    lvs.clear();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (mask & (GroupMask{1} << g)) {
        means.push_back(groups[g].mean.row(r).data());
        lvs.push_back(groups[g].log_var.row(r).data());
      }
    }
    if (means.empty() && !include_prior) throw ConfigError("empty subset without the prior");
    poe_fuse(means, lvs, latent, include_prior, out.mean.row(r).data(), out.log_var.row(r).data());
  }
  return out;
}

}  // namespace

std::vector<GaussianBatch> encode_groups(const EnVaeModel& model, const Matrix& x,
                                         GroupMask available) {
  require_columns(model, x);
  std::vector<GaussianBatch> out(model.groups());
  for (std::size_t g = 0; g < model.groups(); ++g) {
    if (!(available & (GroupMask{1} << g))) continue;
    out[g] = split_encoder_output(mlp_eval(model.encoders[g], slice_group(model, x, g)),
                                  model.latent_dim);
  }
  return out;
}

std::vector<GaussianBatch> encode_groups(const EnVaeModel& model, const Matrix& x) {
  return encode_groups(model, x, all_groups_mask(model.groups()));
}

SubsetPosteriors subset_posteriors(std::span<const GaussianBatch> groups, GroupMask available,
                                   bool include_prior) {
  if (available == 0) throw ConfigError("subset_posteriors: no groups available");
  std::size_t rows = 0, latent = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (available & (GroupMask{1} << g)) {
      rows = groups[g].rows();
      latent = groups[g].dim();
      break;
    }
  }
  SubsetPosteriors table;
  table.masks = nonempty_subsets(available);
  for (GroupMask mask : table.masks) {
    table.posteriors.push_back(fuse_batch(groups, mask, include_prior, rows, latent));
  }
  return table;
}

UniformMixture joint_posterior(const SubsetPosteriors& subsets, std::size_t row) {
  if (subsets.posteriors.empty()) throw ShapeError("joint_posterior: empty subset table");
  std::vector<DiagGaussian> comps;
  comps.reserve(subsets.size());
  for (const auto& p : subsets.posteriors) comps.push_back(p.row(row));
  return UniformMixture(std::move(comps));
}

Matrix decode_all(const EnVaeModel& model, const Matrix& z) {
  if (z.cols() != model.latent_dim) throw ShapeError("decode_all: latent width mismatch");
  Matrix out(z.rows(), model.features());
  for (std::size_t g = 0; g < model.groups(); ++g) {
    scatter_group(model, mlp_eval(model.decoders[g], z), g, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) throw ShapeError("cross-entropy: label count mismatch");
  if (grad) *grad = Matrix(batch, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DataError("label out of range");
    auto row = logits.row(b);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - row[static_cast<std::size_t>(y)];
    if (grad) {
      for (std::size_t c = 0; c < classes; ++c) {
        (*grad)(b, c) = (std::exp(row[c] - log_z) - (static_cast<int>(c) == y ? 1.0 : 0.0)) /
                        static_cast<double>(batch);
      }
    }
  }
  return total / static_cast<double>(batch);
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

struct ReconRow {
  std::size_t sample;
  std::size_t slot;
};

void append(Gradients& into, Gradients&& part) {
  for (auto& t : part) into.push_back(std::move(t));
}

}  // namespace

LossResult compute_loss(EnVaeModel& model, const Matrix& x, const std::vector<int>* labels,
                        double beta, Rng& rng, Mode mode, bool want_grads) {
  require_columns(model, x);
  const std::size_t batch = x.rows();
  const std::size_t latent = model.latent_dim;
  const std::size_t m = model.groups();
  if (batch == 0) throw ShapeError("empty batch");
  const bool supervised = labels != nullptr && model.head.has_value();
  if (labels && labels->size() != batch) throw ShapeError("label count mismatch");

  // Encoders.
  std::vector<Matrix> x_groups(m);
  std::vector<ForwardResult> enc(m);
  std::vector<GaussianBatch> experts(m);
  for (std::size_t g = 0; g < m; ++g) {
    x_groups[g] = slice_group(model, x, g);
    enc[g] = mlp_forward(model.encoders[g], x_groups[g], mode, rng);
    experts[g] = split_encoder_output(enc[g].output, latent);
  }

  // Subsets whose posteriors are needed and the rows to reconstruct.
  const GroupMask full = all_groups_mask(m);
  const bool enumerate_all = m <= kMaxEnumeratedGroups;
  if (model.elbo_mode == ElboMode::full_enumeration && !enumerate_all) {
    throw ConfigError("full_enumeration requires m <= 8");
  }
  std::vector<GroupMask> slots;
  std::map<GroupMask, std::size_t> slot_of;
  auto slot_for = [&](GroupMask mask) {
    auto [it, inserted] = slot_of.emplace(mask, slots.size());
    if (inserted) slots.push_back(mask);
    return it->second;
  };
  std::vector<ReconRow> rows;
  if (enumerate_all) {
    for (GroupMask mask : nonempty_subsets(full)) slot_for(mask);
  }
  const std::size_t subset_count = enumerate_all ? slots.size() : std::size_t{full};
  if (model.elbo_mode == ElboMode::full_enumeration) {
    for (std::size_t k = 0; k < slots.size(); ++k) {
      for (std::size_t b = 0; b < batch; ++b) rows.push_back({b, k});
    }
  } else {
    for (std::size_t s = 0; s < model.mixture_samples; ++s) {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t pick = rng.uniform_index(subset_count);
        const std::size_t slot = enumerate_all ? pick : slot_for(static_cast<GroupMask>(pick + 1));
        rows.push_back({b, slot});
      }
    }
  }
  std::size_t full_slot = 0;
  if (supervised) full_slot = slot_for(full);

  std::vector<GaussianBatch> post(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    post[k] = fuse_batch(experts, slots[k], model.include_prior, batch, latent);
  }

  // Reparameterized latents, one per reconstruction row.
  const std::size_t n_rows = rows.size();
  Matrix eps(n_rows, latent), z(n_rows, latent);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& p = post[rows[r].slot];
    for (std::size_t l = 0; l < latent; ++l) {
      eps(r, l) = rng.normal();
      z(r, l) = p.mean(rows[r].sample, l) +
                std::exp(0.5 * p.log_var(rows[r].sample, l)) * eps(r, l);
    }
  }

  // Decoders and squared reconstruction error.
  std::vector<ForwardResult> dec(m);
  std::vector<double> slot_error(slots.size(), 0.0);
  double squared_error = 0.0;
  for (std::size_t g = 0; g < m; ++g) {
    dec[g] = mlp_forward(model.decoders[g], z, mode, rng);
    const Matrix& xhat = dec[g].output;
    for (std::size_t r = 0; r < n_rows; ++r) {
      auto target = x_groups[g].row(rows[r].sample);
      auto pred = xhat.row(r);
      double acc = 0.0;
      for (std::size_t j = 0; j < target.size(); ++j) {
        const double d = pred[j] - target[j];
        acc += d * d;
      }
      slot_error[rows[r].slot] += acc;
      squared_error += acc;
    }
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (!std::isfinite(slot_error[k])) {
      throw NumericError("non-finite reconstruction loss for subset mask " +
                         std::to_string(slots[k]) + " (slot " + std::to_string(k) + ")");
    }
  }
  const double row_weight = 1.0 / static_cast<double>(n_rows);

  // KL weights per (slot, sample): the average over every subset when they
  // are all enumerated, otherwise over the sampled reconstruction rows.
  std::vector<std::vector<double>> kl_weight(slots.size(), std::vector<double>(batch, 0.0));
  if (enumerate_all) {
    const double w = 1.0 / static_cast<double>(subset_count * batch);
    for (std::size_t k = 0; k < subset_count; ++k) std::fill(kl_weight[k].begin(), kl_weight[k].end(), w);
  } else {
    for (const auto& r : rows) kl_weight[r.slot][r.sample] += row_weight;
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (kl_weight[k][b] == 0.0) continue;
      kl += kl_weight[k][b] * kl_std_normal(post[k].mean.row(b), post[k].log_var.row(b));
    }
  }

  LossResult result;
  result.reconstruction = squared_error * row_weight;
  result.kl = kl;

  // Classifier head.
  Matrix head_eps;
  ForwardResult head_fwd;
  Matrix head_grad;
  if (supervised) {
    const auto& p = post[full_slot];
    Matrix hz(batch, latent);
    if (mode == Mode::train) {
      head_eps = Matrix(batch, latent);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < latent; ++l) {
          head_eps(b, l) = rng.normal();
          hz(b, l) = p.mean(b, l) + std::exp(0.5 * p.log_var(b, l)) * head_eps(b, l);
        }
      }
    } else {
      hz = p.mean;
    }
    head_fwd = mlp_forward(*model.head, hz, mode, rng);
    result.cross_entropy =
        softmax_cross_entropy(head_fwd.output, *labels, want_grads ? &head_grad : nullptr);
  }

  result.total = result.reconstruction + beta * result.kl + result.cross_entropy;
  if (!std::isfinite(result.total)) throw NumericError("non-finite loss");
  if (!want_grads) return result;

  // Backward: decoders.
  std::vector<GaussianBatch> post_grad(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    post_grad[k] = {Matrix(batch, latent), Matrix(batch, latent)};
  }
  Matrix dz(n_rows, latent);
  Gradients dec_grads;
  for (std::size_t g = 0; g < m; ++g) {
    const Matrix& xhat = dec[g].output;
    Matrix out_grad(n_rows, xhat.cols());
    for (std::size_t r = 0; r < n_rows; ++r) {
      auto target = x_groups[g].row(rows[r].sample);
      for (std::size_t j = 0; j < target.size(); ++j) {
        out_grad(r, j) = 2.0 * row_weight * (xhat(r, j) - target[j]);
      }
    }
    auto back = mlp_backward(model.decoders[g], dec[g].cache, out_grad);
    for (std::size_t k = 0; k < dz.size(); ++k) dz.data()[k] += back.input_grad.data()[k];
    append(dec_grads, std::move(back.param_grads));
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& p = post[rows[r].slot];
    auto& pg = post_grad[rows[r].slot];
    const std::size_t b = rows[r].sample;
    for (std::size_t l = 0; l < latent; ++l) {
      pg.mean(b, l) += dz(r, l);
      pg.log_var(b, l) += dz(r, l) * eps(r, l) * 0.5 * std::exp(0.5 * p.log_var(b, l));
    }
  }
  // KL.
  for (std::size_t k = 0; k < slots.size(); ++k) {
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = beta * kl_weight[k][b];
      if (w == 0.0) continue;
      for (std::size_t l = 0; l < latent; ++l) {
        post_grad[k].mean(b, l) += w * post[k].mean(b, l);
        post_grad[k].log_var(b, l) += w * 0.5 * (std::exp(post[k].log_var(b, l)) - 1.0);
      }
    }
  }
  // Head.
  Gradients head_grads;
  if (supervised) {
    auto back = mlp_backward(*model.head, head_fwd.cache, head_grad);
    auto& pg = post_grad[full_slot];
    const auto& p = post[full_slot];
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < latent; ++l) {
        pg.mean(b, l) += back.input_grad(b, l);
        if (mode == Mode::train) {
          pg.log_var(b, l) +=
              back.input_grad(b, l) * head_eps(b, l) * 0.5 * std::exp(0.5 * p.log_var(b, l));
        }
      }
    }
    head_grads = std::move(back.param_grads);
  } else if (model.head) {
    head_grads = zero_gradients(*model.head);
  }

  // Product-of-experts backward into each group posterior.
  std::vector<GaussianBatch> expert_grad(m);
  std::vector<Matrix> precision(m);
  for (std::size_t g = 0; g < m; ++g) {
    expert_grad[g] = {Matrix(batch, latent), Matrix(batch, latent)};
    precision[g] = Matrix(batch, latent);
    for (std::size_t k = 0; k < precision[g].size(); ++k) {
      precision[g].data()[k] = std::exp(-experts[g].log_var.data()[k]);
    }
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const GroupMask mask = slots[k];
    std::vector<std::size_t> members;
    for (std::size_t g = 0; g < m; ++g) {
      if (mask & (GroupMask{1} << g)) members.push_back(g);
    }
    const auto& pg = post_grad[k];
    if (members.size() == 1 && !model.include_prior) {
      auto& eg = expert_grad[members[0]];
      for (std::size_t i = 0; i < pg.mean.size(); ++i) {
        eg.mean.data()[i] += pg.mean.data()[i];
        eg.log_var.data()[i] += pg.log_var.data()[i];
      }
      continue;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < latent; ++l) {
        const double g_mean = pg.mean(b, l);
        const double g_lv = pg.log_var(b, l);
        if (g_mean == 0.0 && g_lv == 0.0) continue;
        double total = model.include_prior ? 1.0 : 0.0;
        for (std::size_t g : members) total += precision[g](b, l);
        const double fused_mean = post[k].mean(b, l);
        for (std::size_t g : members) {
          const double p = precision[g](b, l);
          expert_grad[g].mean(b, l) += g_mean * p / total;
          const double d_precision =
              g_mean * (experts[g].mean(b, l) - fused_mean) / total - g_lv / total;
          expert_grad[g].log_var(b, l) += -p * d_precision;
        }
      }
    }
  }

  // Encoders, through the log-variance clamp.
  Gradients enc_grads;
  for (std::size_t g = 0; g < m; ++g) {
    Matrix out_grad(batch, 2 * latent);
    const Matrix& raw = enc[g].output;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < latent; ++l) {
        out_grad(b, l) = expert_grad[g].mean(b, l);
        const double lv = raw(b, latent + l);
        const bool inside = lv >= kLogVarMin && lv <= kLogVarMax;
        out_grad(b, latent + l) = inside ? expert_grad[g].log_var(b, l) : 0.0;
      }
    }
    auto back = mlp_backward(model.encoders[g], enc[g].cache, out_grad, false);
    append(enc_grads, std::move(back.param_grads));
  }

  result.grads = std::move(enc_grads);
  append(result.grads, std::move(dec_grads));
  append(result.grads, std::move(head_grads));
  return result;
}

GaussianBatch infer_latent(const EnVaeModel& model, const Matrix& x, GroupMask available,
                           LatentReduction reduction) {
  require_columns(model, x);
  const GroupMask full = all_groups_mask(model.groups());
  if (available & ~full) throw ConfigError("availability mask names groups the model lacks");
  const std::size_t batch = x.rows();
  const std::size_t latent = model.latent_dim;
  if (available == 0) {
    if (!model.include_prior) throw ConfigError("no groups available and the prior is off");
    return {Matrix(batch, latent, 0.0), Matrix(batch, latent, 0.0)};
  }
  const auto experts = encode_groups(model, x, available);
  if (reduction == LatentReduction::poe_full) {
    return fuse_batch(experts, available, model.include_prior, batch, latent);
  }
  const auto table = subset_posteriors(experts, available, model.include_prior);
  GaussianBatch out{Matrix(batch, latent), Matrix(batch, latent)};
  for (std::size_t b = 0; b < batch; ++b) {
    const auto matched = moment_match(joint_posterior(table, b));
    std::copy(matched.mean.begin(), matched.mean.end(), out.mean.row(b).begin());
    std::copy(matched.log_var.begin(), matched.log_var.end(), out.log_var.row(b).begin());
  }
  return out;
}

SupervisedOutput supervised_forward(EnVaeModel& model, const Matrix& x, Mode mode, Rng& rng) {
  if (!model.head) throw ConfigError("model has no classifier head");
  SupervisedOutput out;
  if (mode == Mode::eval) {
    out.latent = infer_latent(model, x, all_groups_mask(model.groups()));
    out.logits = mlp_eval(*model.head, out.latent.mean);
    return out;
  }
  require_columns(model, x);
  std::vector<GaussianBatch> experts(model.groups());
  for (std::size_t g = 0; g < model.groups(); ++g) {
    auto fwd = mlp_forward(model.encoders[g], slice_group(model, x, g), mode, rng);
    experts[g] = split_encoder_output(fwd.output, model.latent_dim);
  }
  out.latent = fuse_batch(experts, all_groups_mask(model.groups()), model.include_prior, x.rows(),
                          model.latent_dim);
  Matrix z(x.rows(), model.latent_dim);
  for (std::size_t k = 0; k < z.size(); ++k) {
    z.data()[k] = out.latent.mean.data()[k] + std::exp(0.5 * out.latent.log_var.data()[k]) * rng.normal();
  }
  out.logits = mlp_forward(*model.head, z, mode, rng).output;
  return out;
}

}  // namespace envae

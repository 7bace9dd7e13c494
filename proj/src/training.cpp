#include "envae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "envae/error.hpp"
#include "envae/metrics.hpp"
#include "envae/optim.hpp"
#include "envae/parallel.hpp"

namespace envae {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs two rows)");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0 || patience > max_epochs) {
    throw ConfigError("patience must lie in 1..max_epochs");
  }
  if (!(beta_max >= 0.0) || !std::isfinite(beta_max)) throw ConfigError("beta_max must be >= 0");
  if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
  if (model.latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (model.experts == 0 || model.experts > 31) throw ConfigError("experts must lie in 1..31");
  if (model.elbo_mode == ElboMode::full_enumeration && model.experts > kMaxEnumeratedGroups) {
    throw ConfigError("full_enumeration with m = " + std::to_string(model.experts) +
                      " would decode all 2^m - 1 = " +
                      std::to_string((std::size_t{1} << model.experts) - 1) +
                      " subsets per sample; it is limited to m <= 8, use mixture_sample");
  }
  if (model.mixture_samples == 0) throw ConfigError("mixture_samples must be >= 1");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

double beta_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.beta_warmup_epochs == 0) return cfg.beta_max;
  const double ramp = std::min(1.0, static_cast<double>(epoch) /
                                        static_cast<double>(cfg.beta_warmup_epochs));
  return cfg.beta_max * ramp;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,valid_loss,beta\n";
  char buf[128];
  for (std::size_t e = 0; e < epochs(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, train_loss[e], valid_loss[e],
                  beta[e]);
    out << buf;
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t rows, std::size_t batch_size,
                                                   Rng& rng) {
  if (rows < 2) throw DataError("training needs at least 2 rows");
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < rows; start += batch_size) {
    const std::size_t end = std::min(rows, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

constexpr std::uint64_t kTrainTag = 0x747261696eu;
constexpr std::uint64_t kValidTag = 0x76616c6964u;

AdamConfig adam_of(const TrainConfig& cfg) {
  return {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
}

}  // namespace

double validation_loss(const EnVaeModel& model, const Matrix& x_valid,
                       const std::vector<int>& y_valid, const TrainConfig& cfg) {
  EnVaeModel copy = model;
  Rng rng(derive_seed(cfg.seed, {kValidTag}));
  const std::vector<int>* labels = cfg.supervised ? &y_valid : nullptr;
  return compute_loss(copy, x_valid, labels, cfg.beta_max, rng, Mode::eval, false).total;
}

TrainResult train(EnVaeModel model, const Matrix& x_train, const std::vector<int>& y_train,
                  const Matrix& x_valid, const std::vector<int>& y_valid, const TrainConfig& cfg) {
  cfg.validate();
  if (x_train.cols() != model.features() || x_valid.cols() != model.features()) {
    throw ShapeError("training data width does not match the model");
  }
  if (x_valid.rows() == 0) throw DataError("validation split is empty");
  if (cfg.supervised && !model.head) throw ConfigError("supervised training needs a classifier head (>= 2 classes)");
  if (cfg.supervised && (y_train.size() != x_train.rows() || y_valid.size() != x_valid.rows())) {
    throw ShapeError("label count mismatch");
  }
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(cfg.seed, {kTrainTag}));
  AdamState adam;
  const AdamConfig adam_cfg = adam_of(cfg);

  TrainResult result{model, {}};
  double best = INFINITY;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double beta = beta_at_epoch(cfg, epoch);
    const auto batches = make_batches(x_train.rows(), cfg.batch_size, rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Matrix xb = x_train.select_rows(batches[b]);
      std::vector<int> yb;
      if (cfg.supervised) yb = pick_labels(y_train, batches[b]);
      LossResult loss;
      try {
        loss = compute_loss(model, xb, cfg.supervised ? &yb : nullptr, beta, rng, Mode::train, true);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ": " + e.what());
      }
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b));
      }
      clip_global_norm(loss.grads, cfg.clip);
      adam_step(model.parameters(), loss.grads, adam, adam_cfg);
      loss_sum += loss.total * static_cast<double>(batches[b].size());
    }
    const double valid = validation_loss(model, x_valid, y_valid, cfg);
    if (!std::isfinite(valid)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.train_loss.push_back(loss_sum / static_cast<double>(x_train.rows()));
    result.history.valid_loss.push_back(valid);
    result.history.beta.push_back(beta);
    if (valid < best) {
      best = valid;
      result.model = model;
      result.history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.history.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Matrix scaled_rows(const Matrix& x, const MinMaxScaler& scaler, std::span<const std::size_t> idx) {
  return apply_scaler(scaler, x.select_rows(idx));
}

std::vector<int> pick_labels(const std::vector<int>& y, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

std::vector<SplitPlan> make_fold_plans(const Dataset& data, const TrainConfig& cfg,
                                       const CvOptions& opts) {
  auto plans = stratified_folds(data.y, data.classes(), opts.folds, opts.valid_fraction, cfg.seed);
  if (opts.n_train) {
    for (auto& p : plans) p = subsample_train(p, data.y, data.classes(), *opts.n_train, cfg.seed);
  }
  return plans;
}

std::vector<FoldResult> cross_validate(const Dataset& data, const TrainConfig& cfg,
                                       const CvOptions& opts) {
  cfg.validate();
  const auto plans = make_fold_plans(data, cfg, opts);
  std::vector<std::size_t> all(data.samples());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  std::vector<FoldResult> results(plans.size());
  parallel_for(plans.size(), opts.threads, [&](std::size_t f) {
    FoldResult& r = results[f];
    r.plan = plans[f];
    r.scaler = fit_scaler(data.x, opts.scale_on_all ? std::span<const std::size_t>(all)
                                                    : std::span<const std::size_t>(r.plan.train));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, {f});
    ModelConfig mc = cfg.model;
    if (cfg.supervised) mc.classes = data.classes();
    else mc.classes = 0;
    fold_cfg.model = mc;
    EnVaeModel model = EnVaeModel::build(mc, data.features(), fold_cfg.seed);
    r.trained = train(std::move(model), scaled_rows(data.x, r.scaler, r.plan.train),
                      pick_labels(data.y, r.plan.train),
                      scaled_rows(data.x, r.scaler, r.plan.valid),
                      pick_labels(data.y, r.plan.valid), fold_cfg);
  });
  return results;
}

Classifier train_classifier(const Matrix& z_train, const std::vector<int>& y_train,
                            const Matrix& z_valid, const std::vector<int>& y_valid,
                            std::size_t classes, const ClassifierConfig& cfg, std::uint64_t seed) {
  if (classes < 2) throw DataError("classifier needs at least 2 classes");
  {
    std::vector<int> present(y_train);
    std::sort(present.begin(), present.end());
    if (present.empty() || present.front() == present.back()) {
      throw DataError("classifier training split has a single class");
    }
  }
  if (z_valid.rows() == 0) throw DataError("classifier validation split is empty");
  if (cfg.batch_size < 2 || cfg.max_epochs == 0 || cfg.patience == 0) {
    throw ConfigError("classifier needs batch_size >= 2, max_epochs >= 1, patience >= 1");
  }
  Rng init(derive_seed(seed, {0x696e6974u}));
  Rng rng(derive_seed(seed, {0x666974u}));
  Classifier clf;
  clf.net = Mlp::build({z_train.cols(), cfg.hidden, classes, cfg.batch_norm, cfg.dropout}, init);
  Mlp net = clf.net;
  AdamState adam;
  const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};
  double best = INFINITY;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (const auto& idx : make_batches(z_train.rows(), cfg.batch_size, rng)) {
      auto fwd = mlp_forward(net, z_train.select_rows(idx), Mode::train, rng);
      Matrix grad;
      softmax_cross_entropy(fwd.output, pick_labels(y_train, idx), &grad);
      auto back = mlp_backward(net, fwd.cache, grad, false);
      clip_global_norm(back.param_grads, cfg.clip);
      adam_step(net.parameters(), back.param_grads, adam, adam_cfg);
    }
    ++clf.epochs;
    const double ce = softmax_cross_entropy(mlp_eval(net, z_valid), y_valid);
    if (ce < best) {
      best = ce;
      clf.net = net;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  clf.best_valid_ce = best;
  return clf;
}

std::vector<int> classify(const Classifier& clf, const Matrix& z) {
  return argmax_rows(mlp_eval(clf.net, z));
}

std::uint64_t classifier_seed(std::uint64_t base_seed, std::size_t seed_index) {
  return derive_seed(base_seed, {0x636c66u, seed_index});
}

SplitLatents split_latents(const EnVaeModel& model, const Matrix& x, const MinMaxScaler& scaler,
                           const SplitPlan& plan, LatentReduction reduction) {
  const GroupMask all = all_groups_mask(model.groups());
  auto mean_of = [&](const std::vector<std::size_t>& idx) {
    return infer_latent(model, scaled_rows(x, scaler, idx), all, reduction).mean;
  };
  return {mean_of(plan.train), mean_of(plan.valid), mean_of(plan.test)};
}

std::vector<DownstreamRun> eval_downstream(const SplitLatents& z, const std::vector<int>& y,
                                           const SplitPlan& plan, std::size_t classes,
                                           const ClassifierConfig& cfg, std::size_t n_seeds,
                                           std::uint64_t base_seed) {
  const auto y_train = pick_labels(y, plan.train);
  const auto y_valid = pick_labels(y, plan.valid);
  const auto y_test = pick_labels(y, plan.test);
  std::vector<DownstreamRun> runs;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    DownstreamRun run;
    run.seed_index = s;
    run.seed = classifier_seed(base_seed, s);
    const auto clf = train_classifier(z.train, y_train, z.valid, y_valid, classes, cfg, run.seed);
    run.epochs = clf.epochs;
    run.balanced_accuracy = balanced_accuracy(y_test, classify(clf, z.test), classes);
    runs.push_back(run);
  }
  return runs;
}

}  // namespace envae

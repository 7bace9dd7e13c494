#include "envae/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "envae/error.hpp"
#include "envae/parallel.hpp"

namespace envae {

MinMaxScaler fold_scaler(const Dataset& data, const SplitPlan& plan, bool scale_on_all) {
  if (!scale_on_all) return fit_scaler(data.x, plan.train);
  std::vector<std::size_t> all(data.samples());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return fit_scaler(data.x, all);
}

std::vector<FoldModel> to_fold_models(std::vector<FoldResult> folds) {
  std::vector<FoldModel> out;
  for (auto& f : folds) out.push_back({std::move(f.plan), std::move(f.scaler), std::move(f.trained.model)});
  return out;
}

std::vector<double> EvalResult::accuracies() const {
  std::vector<double> out;
  for (const auto& fold : runs) {
    for (const auto& r : fold) out.push_back(r.balanced_accuracy);
  }
  return out;
}

Summary EvalResult::summary() const {
  const auto acc = accuracies();
  return summarize(acc);
}

Summary TcResult::summary() const { return summarize(per_fold); }
Summary MaskRow::summary() const { return summarize(accuracies); }

namespace {

std::uint64_t fold_classifier_base(const RunConfig& cfg, std::size_t fold) {
  return derive_seed(cfg.train.seed, {0x6576616cu, fold});
}

}  // namespace

EvalResult evaluate(const Dataset& data, const RunConfig& cfg, const std::vector<FoldModel>& folds) {
  EvalResult result;
  result.runs.resize(folds.size());
  result.head_accuracy.resize(folds.size());
  parallel_for(folds.size(), cfg.cv.threads, [&](std::size_t f) {
    const FoldModel& fm = folds[f];
    const auto z = split_latents(fm.model, data.x, fm.scaler, fm.plan, cfg.latent_reduction);
    result.runs[f] = eval_downstream(z, data.y, fm.plan, data.classes(), cfg.classifier,
                                     cfg.classifier_seeds, fold_classifier_base(cfg, f));
    if (fm.model.head) {
      EnVaeModel copy = fm.model;
      Rng unused(0);
      const auto out =
          supervised_forward(copy, scaled_rows(data.x, fm.scaler, fm.plan.test), Mode::eval, unused);
      result.head_accuracy[f] = balanced_accuracy(pick_labels(data.y, fm.plan.test),
                                                  argmax_rows(out.logits), data.classes());
    }
  });
  return result;
}

std::vector<std::size_t> split_rows(const SplitPlan& plan, const std::string& split,
                                    std::size_t samples) {
  if (split == "train") return plan.train;
  if (split == "valid") return plan.valid;
  if (split == "test") return plan.test;
  if (split != "all") throw ConfigError("unknown split '" + split + "'");
  std::vector<std::size_t> all(samples);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

TcResult total_correlation(const Dataset& data, const RunConfig& cfg,
                           const std::vector<FoldModel>& folds) {
  TcResult result;
  result.per_fold.resize(folds.size());
  parallel_for(folds.size(), cfg.cv.threads, [&](std::size_t f) {
    const FoldModel& fm = folds[f];
    const auto rows = split_rows(fm.plan, cfg.tc_split, data.samples());
    const auto post = infer_latent(fm.model, scaled_rows(data.x, fm.scaler, rows),
                                   all_groups_mask(fm.model.groups()), cfg.latent_reduction);
    Matrix z = post.mean;
    if (cfg.tc_source == TcSource::sample) {
      Rng rng(derive_seed(cfg.train.seed, {0x7463u, f}));
      for (std::size_t k = 0; k < z.size(); ++k) {
        z.data()[k] += std::exp(0.5 * post.log_var.data()[k]) * rng.normal();
      }
    }
    result.per_fold[f] = estimate_tc(z, cfg.tc_jitter);
  });
  return result;
}

namespace {

std::vector<GroupMask> masks_with_dropped(std::size_t m, std::size_t dropped, std::uint64_t seed) {
  const std::size_t keep = m - dropped;
  std::vector<GroupMask> out;
  if (m <= kMaxEnumeratedGroups) {
    for (GroupMask mask : nonempty_subsets(all_groups_mask(m))) {
      if (static_cast<std::size_t>(std::popcount(mask)) == keep) out.push_back(mask);
    }
    return out;
  }
  constexpr std::size_t kMaxSampled = 256;
  // Count C(m, keep), capped.
  double combos = 1.0;
  for (std::size_t i = 0; i < keep; ++i) combos = combos * static_cast<double>(m - i) / static_cast<double>(i + 1);
  Rng rng(derive_seed(seed, {0x6d61736bu, dropped}));
  std::vector<GroupMask> seen;
  const std::size_t want = combos <= kMaxSampled ? static_cast<std::size_t>(std::llround(combos)) : kMaxSampled;
  while (seen.size() < want) {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    GroupMask mask = 0;
    for (std::size_t i = 0; i < keep; ++i) mask |= GroupMask{1} << order[i];
    if (std::find(seen.begin(), seen.end(), mask) == seen.end()) seen.push_back(mask);
  }
  std::sort(seen.begin(), seen.end());
  return seen;
}

}  // namespace

std::vector<MaskRow> mask_curve(const Dataset& data, const RunConfig& cfg,
                                const std::vector<FoldModel>& folds) {
  if (folds.empty()) return {};
  const std::size_t m = folds.front().model.groups();
  for (const auto& f : folds) {
    if (f.model.groups() != m) throw DataError("folds disagree on the number of groups");
  }
  std::vector<std::vector<GroupMask>> masks(m);
  for (std::size_t d = 0; d < m; ++d) masks[d] = masks_with_dropped(m, d, cfg.train.seed);

  // per fold, per drop count, per seed: accuracy averaged over masks
  std::vector<std::vector<std::vector<double>>> acc(
      folds.size(), std::vector<std::vector<double>>(m, std::vector<double>(cfg.classifier_seeds)));
  parallel_for(folds.size(), cfg.cv.threads, [&](std::size_t f) {
    const FoldModel& fm = folds[f];
    const auto z = split_latents(fm.model, data.x, fm.scaler, fm.plan, cfg.latent_reduction);
    const auto y_train = pick_labels(data.y, fm.plan.train);
    const auto y_valid = pick_labels(data.y, fm.plan.valid);
    const auto y_test = pick_labels(data.y, fm.plan.test);
    const Matrix x_test = scaled_rows(data.x, fm.scaler, fm.plan.test);
    std::vector<Classifier> clfs;
    for (std::size_t s = 0; s < cfg.classifier_seeds; ++s) {
      clfs.push_back(train_classifier(z.train, y_train, z.valid, y_valid, data.classes(),
                                      cfg.classifier,
                                      classifier_seed(fold_classifier_base(cfg, f), s)));
    }
    for (std::size_t d = 0; d < m; ++d) {
      std::vector<double> sums(cfg.classifier_seeds, 0.0);
      for (GroupMask mask : masks[d]) {
        const Matrix zt = d == 0 ? z.test : infer_latent(fm.model, x_test, mask, cfg.latent_reduction).mean;
        for (std::size_t s = 0; s < cfg.classifier_seeds; ++s) {
          sums[s] += balanced_accuracy(y_test, classify(clfs[s], zt), data.classes());
        }
      }
      for (std::size_t s = 0; s < cfg.classifier_seeds; ++s) {
        acc[f][d][s] = masks[d].size() == 1 ? sums[s] : sums[s] / static_cast<double>(masks[d].size());
      }
    }
  });

  std::vector<MaskRow> rows(m);
  for (std::size_t d = 0; d < m; ++d) {
    rows[d].dropped = d;
    rows[d].subsets = masks[d].size();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (double a : acc[f][d]) rows[d].accuracies.push_back(a);
    }
  }
  return rows;
}

}  // namespace envae

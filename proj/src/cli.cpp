#include "envae/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "envae/checkpoint.hpp"
#include "envae/config.hpp"
#include "envae/error.hpp"
#include "envae/experiment.hpp"

namespace envae {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonFlags {
  std::string config;
  std::vector<std::string> set;
  std::string data, label, out, run;
  std::optional<std::size_t> seed, experts, threads;
  bool supervised = false;

  Overrides overrides() const {
    Overrides o;
    if (!data.empty()) o.emplace_back("data", data);
    if (!label.empty()) o.emplace_back("label", label);
    if (seed) o.emplace_back("seed", std::to_string(*seed));
    if (experts) o.emplace_back("experts", std::to_string(*experts));
    if (supervised) o.emplace_back("supervised", "on");
    if (threads) o.emplace_back("threads", std::to_string(*threads));
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      o.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return o;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json config_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : config_entries(cfg)) {
    if (k != "threads") j[k] = v;
  }
  return j;
}

json summary_json(const Summary& s, const std::vector<double>& values) {
  return json{{"mean", s.mean}, {"std", s.std}, {"n", values.size()}, {"values", values}};
}

class Report {
 public:
  explicit Report(fs::path path) : path_(std::move(path)) {}
  void add(const json& record) { text_ += record.dump() + "\n"; }
  void write() const { write_text(path_, text_); }

 private:
  fs::path path_;
  std::string text_;
};

void write_timing(const fs::path& dir, const std::string& command, std::size_t threads,
                  std::chrono::steady_clock::time_point start) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(dir / ("timing_" + command + ".json"),
             json{{"command", command}, {"threads", threads}, {"seconds", s}}.dump() + "\n");
}

json dataset_json(const Dataset& d) {
  return json{{"samples", d.samples()},
              {"features", d.features()},
              {"classes", d.classes()},
              {"class_names", d.class_names},
              {"class_counts", d.class_counts()}};
}

// ---------------------------------------------------------------------------
// Run directories

std::string ckpt_name(std::size_t f) { return "fold" + std::to_string(f) + ".ckpt"; }
std::string history_name(std::size_t f) { return "fold" + std::to_string(f) + "_history.csv"; }

void write_plans(const fs::path& dir, const std::vector<FoldModel>& folds, const Dataset& data) {
  json plans = json::array();
  for (const auto& f : folds) {
    plans.push_back(json{{"fold", f.plan.fold},
                         {"seed", f.plan.seed},
                         {"train", f.plan.train},
                         {"valid", f.plan.valid},
                         {"test", f.plan.test}});
  }
  write_text(dir / "plans.json", json{{"dataset", dataset_json(data)}, {"folds", plans}}.dump() + "\n");
}

struct LoadedRun {
  RunConfig cfg;
  Dataset data;
  std::vector<FoldModel> folds;
};

LoadedRun load_run(const fs::path& dir, const Overrides& overrides) {
  if (!fs::exists(dir / "resolved.cfg")) {
    throw DataError(dir.string() + " is not a run directory (no resolved.cfg)");
  }
  const fs::path cfg_path = dir / "resolved.cfg";
  LoadedRun run;
  run.cfg = parse_config(&cfg_path, overrides);
  run.data = load_dataset(run.cfg);
  json plans;
  try {
    plans = json::parse(read_text(dir / "plans.json"));
  } catch (const json::exception& e) {
    throw DataError("cannot parse plans.json: " + std::string(e.what()));
  }
  if (plans["dataset"]["samples"].get<std::size_t>() != run.data.samples() ||
      plans["dataset"]["features"].get<std::size_t>() != run.data.features()) {
    throw DataError("dataset shape differs from the one the run was trained on");
  }
  for (const auto& p : plans["folds"]) {
    FoldModel fm;
    fm.plan.fold = p["fold"].get<int>();
    fm.plan.seed = p["seed"].get<std::uint64_t>();
    fm.plan.train = p["train"].get<std::vector<std::size_t>>();
    fm.plan.valid = p["valid"].get<std::vector<std::size_t>>();
    fm.plan.test = p["test"].get<std::vector<std::size_t>>();
    for (const auto* idx : {&fm.plan.train, &fm.plan.valid, &fm.plan.test}) {
      for (std::size_t i : *idx) {
        if (i >= run.data.samples()) throw DataError("plans.json indexes past the dataset");
      }
    }
    fm.scaler = fold_scaler(run.data, fm.plan, run.cfg.cv.scale_on_all);
    fm.model = load_checkpoint(dir / ckpt_name(static_cast<std::size_t>(fm.plan.fold)));
    if (fm.model.features() != run.data.features()) {
      throw DataError("checkpoint width does not match the dataset");
    }
    run.folds.push_back(std::move(fm));
  }
  if (run.folds.empty()) throw DataError("run directory has no folds");
  return run;
}

// ---------------------------------------------------------------------------
// Commands

std::vector<FoldModel> do_train(const RunConfig& cfg, const Dataset& data, const fs::path& dir,
                                std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  write_text(dir / "resolved.cfg", config_to_string(cfg));
  auto results = cross_validate(data, cfg.train, cfg.cv);

  Report report(dir / "train_report.jsonl");
  report.add(json{{"record", "config"}, {"command", "train"}, {"config", config_json(cfg)},
                  {"dataset", dataset_json(data)}});
  std::size_t params = 0;
  for (std::size_t f = 0; f < results.size(); ++f) {
    const auto& r = results[f];
    const auto& h = r.trained.history;
    save_checkpoint(r.trained.model, dir / ckpt_name(f));
    h.write_csv(dir / history_name(f));
    params = r.trained.model.parameter_count();
    report.add(json{{"record", "fold"},
                    {"fold", f},
                    {"train", r.plan.train.size()},
                    {"valid", r.plan.valid.size()},
                    {"test", r.plan.test.size()},
                    {"epochs", h.epochs()},
                    {"best_epoch", h.best_epoch},
                    {"best_valid_loss", h.valid_loss[h.best_epoch]},
                    {"final_train_loss", h.train_loss.back()},
                    {"checkpoint", ckpt_name(f)},
                    {"history", history_name(f)}});
    out << "fold " << f << ": " << h.epochs() << " epochs, best " << h.best_epoch
        << ", valid loss " << h.valid_loss[h.best_epoch] << "\n";
  }
  auto folds = to_fold_models(std::move(results));
  write_plans(dir, folds, data);
  report.add(json{{"record", "summary"},
                  {"folds", folds.size()},
                  {"groups", folds.front().model.groups()},
                  {"elbo_mode", to_string(folds.front().model.elbo_mode)},
                  {"parameters", params},
                  {"artifacts", {{"plans", "plans.json"}, {"config", "resolved.cfg"}}}});
  report.write();
  write_timing(dir, "train", cfg.cv.threads, start);
  return folds;
}

EvalResult do_eval(const RunConfig& cfg, const Dataset& data, const std::vector<FoldModel>& folds,
                   const fs::path& dir, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto result = evaluate(data, cfg, folds);
  Report report(dir / "eval_report.jsonl");
  report.add(json{{"record", "config"}, {"command", "eval"}, {"config", config_json(cfg)}});
  std::string csv = "fold,seed_index,classifier_seed,balanced_accuracy\n";
  std::vector<double> head;
  for (std::size_t f = 0; f < result.runs.size(); ++f) {
    std::vector<double> fold_acc;
    for (const auto& r : result.runs[f]) {
      report.add(json{{"record", "run"},
                      {"fold", f},
                      {"seed_index", r.seed_index},
                      {"classifier_seed", r.seed},
                      {"balanced_accuracy", r.balanced_accuracy},
                      {"classifier_epochs", r.epochs}});
      csv += std::to_string(f) + "," + std::to_string(r.seed_index) + "," +
             std::to_string(r.seed) + "," + json(r.balanced_accuracy).dump() + "\n";
      fold_acc.push_back(r.balanced_accuracy);
    }
    json rec{{"record", "fold"}, {"fold", f}, {"balanced_accuracy", summary_json(summarize(fold_acc), fold_acc)}};
    if (result.head_accuracy[f]) {
      rec["head_balanced_accuracy"] = *result.head_accuracy[f];
      head.push_back(*result.head_accuracy[f]);
    }
    report.add(rec);
  }
  const auto acc = result.accuracies();
  const auto s = result.summary();
  json summary{{"record", "summary"}, {"runs", acc.size()}, {"balanced_accuracy", summary_json(s, acc)}};
  if (!head.empty()) summary["head_balanced_accuracy"] = summary_json(summarize(head), head);
  summary["artifacts"] = {{"table", "eval_summary.csv"}};
  report.add(summary);
  report.write();
  csv += "mean,,," + json(s.mean).dump() + "\nstd,,," + json(s.std).dump() + "\n";
  write_text(dir / "eval_summary.csv", csv);
  write_timing(dir, "eval", cfg.cv.threads, start);
  char line[128];
  std::snprintf(line, sizeof line, "balanced accuracy %.2f +- %.2f over %zu runs\n", 100 * s.mean,
                100 * s.std, acc.size());
  out << line;
  return result;
}

void do_tc(const LoadedRun& run, const fs::path& dir, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto tc = total_correlation(run.data, run.cfg, run.folds);
  Report report(dir / "tc_report.jsonl");
  report.add(json{{"record", "config"}, {"command", "tc"}, {"config", config_json(run.cfg)}});
  std::string csv = "fold,total_correlation\n";
  for (std::size_t f = 0; f < tc.per_fold.size(); ++f) {
    report.add(json{{"record", "fold"},
                    {"fold", f},
                    {"total_correlation", tc.per_fold[f]},
                    {"reported", std::max(0.0, tc.per_fold[f])},
                    {"checkpoint", ckpt_name(f)}});
    csv += std::to_string(f) + "," + json(tc.per_fold[f]).dump() + "\n";
  }
  report.add(json{{"record", "summary"},
                  {"source", run.cfg.tc_source == TcSource::mean ? "mean" : "sample"},
                  {"split", run.cfg.tc_split},
                  {"jitter", run.cfg.tc_jitter},
                  {"total_correlation", summary_json(tc.summary(), tc.per_fold)},
                  {"artifacts", {{"table", "tc_summary.csv"}}}});
  report.write();
  write_text(dir / "tc_summary.csv", csv);
  write_timing(dir, "tc", run.cfg.cv.threads, start);
  out << "total correlation " << tc.summary().mean << " +- " << tc.summary().std << "\n";
}

void do_mask_eval(const LoadedRun& run, const fs::path& dir, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = mask_curve(run.data, run.cfg, run.folds);
  Report report(dir / "mask_report.jsonl");
  report.add(json{{"record", "config"}, {"command", "mask-eval"}, {"config", config_json(run.cfg)}});
  std::string csv = "groups_dropped,subsets,mean,std\n";
  for (const auto& r : rows) {
    const auto s = r.summary();
    report.add(json{{"record", "drop"},
                    {"groups_dropped", r.dropped},
                    {"subsets", r.subsets},
                    {"balanced_accuracy", summary_json(s, r.accuracies)}});
    csv += std::to_string(r.dropped) + "," + std::to_string(r.subsets) + "," + json(s.mean).dump() +
           "," + json(s.std).dump() + "\n";
    char line[128];
    std::snprintf(line, sizeof line, "dropped %zu: %.2f +- %.2f (%zu subsets)\n", r.dropped,
                  100 * s.mean, 100 * s.std, r.subsets);
    out << line;
  }
  report.add(json{{"record", "summary"}, {"rows", rows.size()}, {"artifacts", {{"table", "mask_summary.csv"}}}});
  report.write();
  write_text(dir / "mask_summary.csv", csv);
  write_timing(dir, "mask-eval", run.cfg.cv.threads, start);
}

void do_export(const LoadedRun& run, const fs::path& dir, std::optional<std::size_t> fold,
               const std::string& split, std::ostream& out) {
  for (const auto& fm : run.folds) {
    const auto f = static_cast<std::size_t>(fm.plan.fold);
    if (fold && *fold != f) continue;
    const auto rows = split_rows(fm.plan, split, run.data.samples());
    const auto z = infer_latent(fm.model, scaled_rows(run.data.x, fm.scaler, rows),
                                all_groups_mask(fm.model.groups()), run.cfg.latent_reduction);
    const fs::path path = dir / ("latents_fold" + std::to_string(f) + "_" + split + ".csv");
    write_latents(path, rows, pick_labels(run.data.y, rows), z.mean);
    out << "wrote " << path.string() << "\n";
  }
}

void do_sweep(RunConfig cfg, const Dataset& data, const fs::path& dir, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  std::vector<std::size_t> ks = cfg.sweep_experts;
  if (std::find(ks.begin(), ks.end(), std::size_t{1}) == ks.end()) ks.insert(ks.begin(), 1);
  Report report(dir / "sweep_report.jsonl");
  report.add(json{{"record", "config"}, {"command", "sweep-experts"}, {"config", config_json(cfg)}});
  std::string csv = "experts,mean,std,improvement_pp\n";
  std::vector<std::pair<std::size_t, Summary>> rows;
  std::optional<double> baseline;
  for (std::size_t k : ks) {
    RunConfig kc = cfg;
    apply_setting(kc, "experts", std::to_string(k));
    kc.finalize();
    const fs::path sub = dir / ("k" + std::to_string(k));
    out << "experts " << k << "\n";
    const auto folds = do_train(kc, data, sub, out);
    const auto result = do_eval(kc, data, folds, sub, out);
    const auto s = result.summary();
    if (k == 1) baseline = s.mean;
    rows.emplace_back(k, s);
    const auto acc = result.accuracies();
    report.add(json{{"record", "experts"},
                    {"experts", k},
                    {"balanced_accuracy", summary_json(s, acc)},
                    {"run_dir", "k" + std::to_string(k)}});
  }
  for (const auto& [k, s] : rows) {
    const double imp = 100.0 * (s.mean - *baseline);
    csv += std::to_string(k) + "," + json(s.mean).dump() + "," + json(s.std).dump() + "," +
           json(imp).dump() + "\n";
    report.add(json{{"record", "improvement"}, {"experts", k}, {"improvement_pp", imp}});
    char line[96];
    std::snprintf(line, sizeof line, "k=%zu  %.2f +- %.2f  (%+.2f pp vs k=1)\n", k, 100 * s.mean,
                  100 * s.std, imp);
    out << line;
  }
  report.add(json{{"record", "summary"}, {"artifacts", {{"table", "sweep_summary.csv"}}}});
  report.write();
  write_text(dir / "sweep_summary.csv", csv);
  write_timing(dir, "sweep-experts", cfg.cv.threads, start);
}

void add_config_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config,-c", f.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.set, "override a config key (key=value), repeatable");
  cmd->add_option("--data", f.data, "input CSV (default: synthetic generator)");
  cmd->add_option("--label", f.label, "label column name");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--experts,-m", f.experts, "number of feature groups");
  cmd->add_flag("--supervised", f.supervised, "train with a classifier head");
  cmd->add_option("--threads", f.threads, "worker threads for folds");
}

void add_run_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--run", f.run, "run directory written by train")->required();
  cmd->add_option("--set", f.set, "override a config key (key=value), repeatable");
  cmd->add_option("--threads", f.threads, "worker threads for folds");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ensembles of grouped-feature VAEs with product-of-experts fusion"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  bool help_config = false;
  app.add_flag("--help-config", help_config, "list every config key with its default");

  CommonFlags f;
  std::size_t n = 100, d = 1000, latent = 8, classes = 4;
  double noise = 1.0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic high-dimensional CSV");
  synth->add_option("--n", n, "samples")->capture_default_str();
  synth->add_option("--d", d, "features")->capture_default_str();
  synth->add_option("--latent", latent, "generating factors")->capture_default_str();
  synth->add_option("--classes", classes, "classes")->capture_default_str();
  synth->add_option("--noise", noise, "noise standard deviation")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--out,-o", synth_out, "output CSV path")->required();

  auto* train = app.add_subcommand("train", "5-fold cross-validated training; writes checkpoints and a report");
  add_config_flags(train, f);
  train->add_option("--out,-o", f.out, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "downstream classifier protocol on a trained run");
  add_run_flags(eval, f);
  auto* tc = app.add_subcommand("tc", "total correlation of each fold's latents");
  add_run_flags(tc, f);
  auto* mask = app.add_subcommand("mask-eval", "accuracy when groups are missing at inference");
  add_run_flags(mask, f);
  auto* exp = app.add_subcommand("export-latents", "write latent means as CSV");
  add_run_flags(exp, f);
  std::optional<std::size_t> fold;
  std::string split = "all";
  exp->add_option("--fold", fold, "only this fold");
  exp->add_option("--split", split, "all | train | valid | test")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-experts", "train and evaluate for each expert count");
  add_config_flags(sweep, f);
  sweep->add_option("--out,-o", f.out, "sweep directory")->required();

  for (auto* cmd : {train, sweep}) cmd->footer("Config keys:\n" + config_help());

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    if (std::find(args.begin(), args.end(), "--help-config") != args.end()) {
      out << "Config keys (key [alias] description [default]):\n" << config_help();
      return kExitOk;
    }
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      SyntheticSpec spec;
      spec.samples = n;
      spec.features = d;
      spec.latent = latent;
      spec.classes = classes;
      spec.noise_sd = noise;
      spec.seed = synth_seed;
      write_csv(synthetic_hdlss(spec).data, synth_out);
      out << "wrote " << synth_out << "\n";
      return kExitOk;
    }
    const Overrides overrides = f.overrides();
    if (train->parsed() || sweep->parsed()) {
      const fs::path cfg_path = f.config;
      const RunConfig cfg = parse_config(f.config.empty() ? nullptr : &cfg_path, overrides);
      const Dataset data = load_dataset(cfg);
      if (train->parsed()) {
        do_train(cfg, data, f.out, out);
      } else {
        do_sweep(cfg, data, f.out, out);
      }
      return kExitOk;
    }
    const fs::path dir = f.run;
    const LoadedRun run = load_run(dir, overrides);
    if (eval->parsed()) do_eval(run.cfg, run.data, run.folds, dir, out);
    if (tc->parsed()) do_tc(run, dir, out);
    if (mask->parsed()) do_mask_eval(run, dir, out);
    if (exp->parsed()) do_export(run, dir, fold, split, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace envae

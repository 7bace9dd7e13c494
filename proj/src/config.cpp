#include "envae/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "envae/error.hpp"

namespace envae {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("cannot parse '" + value + "' for key '" + key + "': expected " + expected);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(d)) {
    bad_value(key, v, "a finite number");
  }
  return d;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    bad_value(key, v, "a non-negative integer");
  }
  errno = 0;
  const unsigned long long n = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_value(key, v, "a smaller integer");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "on/off");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt(double d) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}
std::string fmt(std::size_t n) { return std::to_string(n); }
std::string fmt(bool b) { return b ? "on" : "off"; }
std::string fmt(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Entry {
  std::string key;
  std::string alias;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ENVAE_DOUBLE(name, field, text)                                                     \
  Entry{name, "", text, [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define ENVAE_SIZE(name, field, text)                                                     \
  Entry{name, "", text, [](RunConfig& c, const std::string& v) { c.field = to_size(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define ENVAE_BOOL(name, field, text)                                                     \
  Entry{name, "", text, [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}
#define ENVAE_LIST(name, field, text)                                                     \
  Entry{name, "", text, [](RunConfig& c, const std::string& v) { c.field = to_list(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"data", "", "CSV path; empty uses the synthetic generator",
       [](RunConfig& c, const std::string& v) { c.data = v; },
       [](const RunConfig& c) { return c.data; }},
      {"label", "", "label column of the CSV",
       [](RunConfig& c, const std::string& v) { c.label = v; },
       [](const RunConfig& c) { return c.label; }},
      ENVAE_SIZE("synth_samples", synthetic.samples, "synthetic rows"),
      ENVAE_SIZE("synth_features", synthetic.features, "synthetic features"),
      ENVAE_SIZE("synth_latent", synthetic.latent, "synthetic generating factors"),
      ENVAE_SIZE("synth_classes", synthetic.classes, "synthetic classes"),
      ENVAE_DOUBLE("synth_noise", synthetic.noise_sd, "synthetic noise standard deviation"),
      {"synth_seed", "", "synthetic generator seed",
       [](RunConfig& c, const std::string& v) { c.synthetic.seed = to_size("synth_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.seed); }},
      {"seed", "", "run seed (splits, initialization, noise)",
       [](RunConfig& c, const std::string& v) { c.train.seed = to_size("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      ENVAE_DOUBLE("lr", train.lr, "Adam learning rate"),
      ENVAE_DOUBLE("adam_beta1", train.beta1, "Adam first-moment decay"),
      ENVAE_DOUBLE("adam_beta2", train.beta2, "Adam second-moment decay"),
      ENVAE_DOUBLE("adam_eps", train.adam_eps, "Adam epsilon"),
      ENVAE_SIZE("batch_size", train.batch_size, "mini-batch size"),
      ENVAE_SIZE("max_epochs", train.max_epochs, "epoch limit"),
      ENVAE_SIZE("patience", train.patience, "early-stopping patience in epochs"),
      ENVAE_DOUBLE("beta_max", train.beta_max, "final KL weight"),
      ENVAE_SIZE("beta_warmup_epochs", train.beta_warmup_epochs, "epochs of linear KL warm-up"),
      ENVAE_DOUBLE("clip", train.clip, "global gradient-norm clip"),
      {"latent_dim", "L", "latent dimension",
       [](RunConfig& c, const std::string& v) { c.train.model.latent_dim = to_size("latent_dim", v); },
       [](const RunConfig& c) { return fmt(c.train.model.latent_dim); }},
      {"experts", "m", "number of feature groups",
       [](RunConfig& c, const std::string& v) { c.train.model.experts = to_size("experts", v); },
       [](const RunConfig& c) { return fmt(c.train.model.experts); }},
      {"elbo_mode", "", "full_enumeration | mixture_sample | auto (full for m <= 4)",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto") c.train.model.elbo_mode.reset();
         else c.train.model.elbo_mode = parse_elbo_mode(v);
       },
       [](const RunConfig& c) {
         return c.train.model.elbo_mode ? to_string(*c.train.model.elbo_mode) : std::string("auto");
       }},
      ENVAE_SIZE("mixture_samples", train.model.mixture_samples, "subsets sampled per row"),
      ENVAE_BOOL("include_prior", train.model.include_prior, "N(0, I) joins every product"),
      ENVAE_BOOL("supervised", train.supervised, "train a classifier head jointly"),
      ENVAE_DOUBLE("dropout", train.model.dropout, "expert dropout"),
      ENVAE_BOOL("batch_norm", train.model.batch_norm, "batch norm in hidden layers"),
      {"hidden", "", "per-expert hidden widths; auto matches the baseline budget",
       [](RunConfig& c, const std::string& v) {
         c.train.model.hidden = v == "auto" ? std::vector<std::size_t>{} : to_list("hidden", v);
       },
       [](const RunConfig& c) {
         return c.train.model.hidden.empty() ? std::string("auto") : fmt(c.train.model.hidden);
       }},
      ENVAE_LIST("baseline_hidden", train.model.baseline_hidden, "single-expert hidden widths"),
      ENVAE_LIST("head_hidden", train.model.head_hidden, "classifier-head hidden widths"),
      ENVAE_DOUBLE("head_dropout", train.model.head_dropout, "classifier-head dropout"),
      ENVAE_SIZE("folds", cv.folds, "cross-validation folds"),
      ENVAE_DOUBLE("valid_fraction", cv.valid_fraction, "validation share of all samples"),
      {"n_train", "", "training samples per fold; 0 keeps them all",
       [](RunConfig& c, const std::string& v) {
         const auto n = to_size("n_train", v);
         if (n == 0) c.cv.n_train.reset();
         else c.cv.n_train = n;
       },
       [](const RunConfig& c) { return fmt(c.cv.n_train.value_or(0)); }},
      {"scaling", "", "train | all (rows used to fit min-max scaling)",
       [](RunConfig& c, const std::string& v) {
         if (v != "train" && v != "all") bad_value("scaling", v, "train or all");
         c.cv.scale_on_all = v == "all";
       },
       [](const RunConfig& c) { return std::string(c.cv.scale_on_all ? "all" : "train"); }},
      ENVAE_SIZE("threads", cv.threads, "worker threads for folds"),
      ENVAE_LIST("clf_hidden", classifier.hidden, "downstream classifier hidden widths"),
      ENVAE_DOUBLE("clf_dropout", classifier.dropout, "downstream classifier dropout"),
      ENVAE_BOOL("clf_batch_norm", classifier.batch_norm, "downstream classifier batch norm"),
      ENVAE_DOUBLE("clf_lr", classifier.lr, "downstream classifier learning rate"),
      ENVAE_SIZE("clf_batch_size", classifier.batch_size, "downstream classifier batch size"),
      ENVAE_SIZE("clf_max_epochs", classifier.max_epochs, "downstream classifier epoch limit"),
      ENVAE_SIZE("clf_patience", classifier.patience, "downstream classifier patience"),
      ENVAE_DOUBLE("clf_clip", classifier.clip, "downstream classifier gradient clip"),
      ENVAE_SIZE("clf_seeds", classifier_seeds, "classifier runs per fold"),
      {"latent_reduction", "", "poe_full | mixture_mean",
       [](RunConfig& c, const std::string& v) { c.latent_reduction = parse_latent_reduction(v); },
       [](const RunConfig& c) { return to_string(c.latent_reduction); }},
      {"tc_source", "", "mean | sample",
       [](RunConfig& c, const std::string& v) {
         if (v == "mean") c.tc_source = TcSource::mean;
         else if (v == "sample") c.tc_source = TcSource::sample;
         else bad_value("tc_source", v, "mean or sample");
       },
       [](const RunConfig& c) { return std::string(c.tc_source == TcSource::mean ? "mean" : "sample"); }},
      {"tc_split", "", "all | train | valid | test",
       [](RunConfig& c, const std::string& v) {
         if (v != "all" && v != "train" && v != "valid" && v != "test") {
           bad_value("tc_split", v, "all, train, valid or test");
         }
         c.tc_split = v;
       },
       [](const RunConfig& c) { return c.tc_split; }},
      ENVAE_DOUBLE("tc_jitter", tc_jitter, "diagonal jitter before the TC log-determinant"),
      ENVAE_LIST("sweep_experts", sweep_experts, "expert counts for sweep-experts"),
  };
  return entries;
}

#undef ENVAE_DOUBLE
#undef ENVAE_SIZE
#undef ENVAE_BOOL
#undef ENVAE_LIST

}  // namespace

void RunConfig::finalize() {
  train.model.beta = train.beta_max;
  if (train.model.experts > kMaxEnumeratedGroups && train.model.elbo_mode &&
      *train.model.elbo_mode == ElboMode::full_enumeration) {
    const std::size_t m = train.model.experts;
    throw ConfigError("m=" + std::to_string(m) +
                      " with elbo_mode=full_enumeration would decode every one of the 2^m-1 = " +
                      std::to_string((std::size_t{1} << std::min<std::size_t>(m, 31)) - 1) +
                      " subset posteriors for each sample in every batch; full enumeration is "
                      "limited to m <= 8, use elbo_mode=mixture_sample");
  }
  if (!train.model.elbo_mode) {
    // Validation below needs a concrete mode; the resolved echo keeps "auto".
    TrainConfig probe = train;
    probe.model.elbo_mode = default_elbo_mode(train.model.experts == 0 ? 1 : train.model.experts);
    probe.validate();
  } else {
    train.validate();
  }
  if (cv.folds < 2) throw ConfigError("folds must be >= 2");
  if (!(cv.valid_fraction > 0.0 && cv.valid_fraction < 1.0)) {
    throw ConfigError("valid_fraction must lie in (0, 1)");
  }
  if (cv.threads == 0) throw ConfigError("threads must be >= 1");
  if (classifier_seeds == 0) throw ConfigError("clf_seeds must be >= 1");
  if (!(tc_jitter >= 0.0)) throw ConfigError("tc_jitter must be >= 0");
  for (std::size_t k : sweep_experts) {
    if (k == 0 || k > 31) throw ConfigError("sweep_experts entries must lie in 1..31");
  }
  if (data.empty() && (synthetic.classes < 2 || synthetic.samples == 0 || synthetic.latent == 0 ||
                       synthetic.latent > synthetic.features)) {
    throw ConfigError("synthetic data needs classes >= 2 and 1 <= synth_latent <= synth_features");
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : registry()) out.emplace_back(e.key, e.get(cfg));
  return out;
}

std::string config_to_string(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : registry()) {
    if (e.key == key || (!e.alias.empty() && e.alias == key)) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "' (see --help-config)");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig parse_config(const std::filesystem::path* file,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) apply_setting(cfg, k, v);
  }
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  cfg.finalize();
  return cfg;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.data.empty()) return load_csv(cfg.data, cfg.label);
  return synthetic_hdlss(cfg.synthetic).data;
}

std::string config_help() {
  const RunConfig defaults;
  std::string s;
  for (const auto& e : registry()) {
    std::string key = e.key + (e.alias.empty() ? "" : " (" + e.alias + ")");
    key.resize(std::max<std::size_t>(key.size(), 24), ' ');
    s += "  " + key + " " + e.help + " [" + e.get(defaults) + "]\n";
  }
  return s;
}

}  // namespace envae

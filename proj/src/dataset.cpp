#include "envae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "envae/error.hpp"
#include "envae/rng.hpp"

namespace envae {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes(), 0);
  for (int c : y) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out = s.substr(first, last - first + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      cell.push_back(ch);
    } else if (ch == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return *end == '\0';
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& label_column) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("CSV is empty");
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) throw DataError("CSV has no label column '" + label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());

  Dataset data;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col) data.feature_names.push_back(header[c]);
  }
  const std::size_t features = data.feature_names.size();
  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError("CSV row " + std::to_string(row) + " (line " + std::to_string(line_no) +
                      ") has " + std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) {
        if (cells[c].empty()) {
          throw DataError("CSV row " + std::to_string(row) + ": empty label");
        }
        raw_labels.push_back(cells[c]);
        continue;
      }
      const std::string& cell = cells[c];
      char* end = nullptr;
      const double v = cell.empty() ? NAN : std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0' || !std::isfinite(v)) {
        throw DataError("CSV row " + std::to_string(row) + " (line " + std::to_string(line_no) +
                        "), column '" + header[c] + "': " +
                        (cell.empty() || (end && *end == '\0') ? "missing or non-finite value"
                                                               : "non-numeric value") +
                        " '" + cell + "'");
      }
      values.push_back(v);
    }
    ++row;
  }
  if (row == 0) throw DataError("CSV has a header but no data rows");
  data.x = Matrix(row, features, std::move(values));

  std::vector<std::string> names = raw_labels;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  bool numeric = true;
  for (const auto& n : names) {
    long long v;
    if (!parse_integer(n, v)) numeric = false;
  }
  if (numeric) {
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      return std::strtoll(a.c_str(), nullptr, 10) < std::strtoll(b.c_str(), nullptr, 10);
    });
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);
  for (const auto& l : raw_labels) data.y.push_back(index.at(l));
  data.class_names = std::move(names);
  return data;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), label_column);
}

void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& name : data.feature_names) out << name << ',';
  out << label_column << '\n';
  char buf[32];
  for (std::size_t r = 0; r < data.samples(); ++r) {
    for (double v : data.x.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << data.class_names[static_cast<std::size_t>(data.y[r])] << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Scaling

MinMaxScaler fit_scaler(const Matrix& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("cannot fit a scaler on zero rows");
  MinMaxScaler s;
  auto first = x.row(rows[0]);
  s.min.assign(first.begin(), first.end());
  s.max = s.min;
  for (std::size_t r : rows) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      s.min[j] = std::min(s.min[j], row[j]);
      s.max[j] = std::max(s.max[j], row[j]);
    }
  }
  return s;
}

Matrix apply_scaler(const MinMaxScaler& scaler, const Matrix& x) {
  if (scaler.min.size() != x.cols()) throw ShapeError("scaler width does not match features");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double range = scaler.max[j] - scaler.min[j];
      out(r, j) = range > 0.0 ? (x(r, j) - scaler.min[j]) / range : 0.0;
    }
  }
  return out;
}

Matrix apply_scaler(const Dataset& data) {
  if (!data.scaler) throw DataError("scaler applied before it was fitted");
  return apply_scaler(*data.scaler, data.x);
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> largest_remainder(std::span<const std::size_t> counts, std::size_t total) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  std::vector<std::size_t> alloc(counts.size(), 0);
  if (n == 0) return alloc;
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double quota = static_cast<double>(counts[c]) * static_cast<double>(total) /
                         static_cast<double>(n);
    alloc[c] = static_cast<std::size_t>(std::floor(quota));
    assigned += alloc[c];
    rema.emplace_back(quota - std::floor(quota), c);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < rema.size(); ++i) {
    const std::size_t c = rema[i].second;
    if (alloc[c] < counts[c]) {
      ++alloc[c];
      ++assigned;
    }
  }
  return alloc;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels,
                                                       std::size_t classes) {
  std::vector<std::vector<std::size_t>> by(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label out of range");
    }
    by[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return by;
}

std::vector<std::size_t> sizes_of(const std::vector<std::vector<std::size_t>>& by) {
  std::vector<std::size_t> s;
  for (const auto& v : by) s.push_back(v.size());
  return s;
}

std::size_t round_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

void sort_plan(SplitPlan& p) {
  std::sort(p.train.begin(), p.train.end());
  std::sort(p.valid.begin(), p.valid.end());
  std::sort(p.test.begin(), p.test.end());
}

}  // namespace

SplitPlan stratified_split(std::span<const int> labels, std::size_t classes,
                           const SplitFractions& fractions, std::uint64_t seed) {
  auto by = indices_by_class(labels, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by[c].size() < 3) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by[c].size()) +
                      " samples; a train/valid/test split needs at least 3");
    }
  }
  const auto counts = sizes_of(by);
  const std::size_t n = labels.size();
  auto test_alloc = largest_remainder(counts, round_count(fractions.test, n));
  auto valid_alloc = largest_remainder(counts, round_count(fractions.valid, n));
  Rng rng(derive_seed(seed, {0x73706c74u}));
  SplitPlan plan;
  plan.seed = seed;
  for (std::size_t c = 0; c < classes; ++c) {
    while (test_alloc[c] + valid_alloc[c] >= counts[c]) {
      if (valid_alloc[c] > 0) {
        --valid_alloc[c];
      } else {
        --test_alloc[c];
      }
    }
    shuffle(by[c].begin(), by[c].end(), rng);
    std::size_t k = 0;
    for (std::size_t i = 0; i < test_alloc[c]; ++i) plan.test.push_back(by[c][k++]);
    for (std::size_t i = 0; i < valid_alloc[c]; ++i) plan.valid.push_back(by[c][k++]);
    while (k < by[c].size()) plan.train.push_back(by[c][k++]);
  }
  sort_plan(plan);
  return plan;
}

std::vector<SplitPlan> stratified_folds(std::span<const int> labels, std::size_t classes,
                                        std::size_t folds, double valid_fraction,
                                        std::uint64_t seed) {
  if (folds < 2) throw ConfigError("need at least 2 folds");
  auto by = indices_by_class(labels, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by[c].size() < folds) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by[c].size()) +
                      " samples, fewer than the " + std::to_string(folds) + " folds");
    }
  }
  Rng rng(derive_seed(seed, {0x666f6c64u}));
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t pos = 0;
  for (auto& members : by) {
    shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) fold_of[i] = pos++ % folds;
  }

  const std::size_t n_valid = round_count(valid_fraction, labels.size());
  std::vector<SplitPlan> plans(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    SplitPlan& plan = plans[f];
    plan.fold = static_cast<int>(f);
    plan.seed = seed;
    std::vector<std::vector<std::size_t>> rest(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i : by[c]) {
        if (fold_of[i] == f) {
          plan.test.push_back(i);
        } else {
          rest[c].push_back(i);
        }
      }
    }
    auto valid_alloc = largest_remainder(sizes_of(rest), n_valid);
    Rng fold_rng(derive_seed(seed, {0x76616cu, f}));
    for (std::size_t c = 0; c < classes; ++c) {
      if (valid_alloc[c] >= rest[c].size()) valid_alloc[c] = rest[c].empty() ? 0 : rest[c].size() - 1;
      std::sort(rest[c].begin(), rest[c].end());
      shuffle(rest[c].begin(), rest[c].end(), fold_rng);
      for (std::size_t k = 0; k < rest[c].size(); ++k) {
        (k < valid_alloc[c] ? plan.valid : plan.train).push_back(rest[c][k]);
      }
    }
    sort_plan(plan);
  }
  return plans;
}

namespace {

// Stratified selection of `target` indices out of `pool`; each class that is
// present keeps at least one member when the budget allows.
std::vector<std::size_t> stratified_take(const std::vector<std::size_t>& pool,
                                         std::span<const int> labels, std::size_t classes,
                                         std::size_t target, Rng& rng) {
  std::vector<std::vector<std::size_t>> by(classes);
  for (std::size_t i : pool) by[static_cast<std::size_t>(labels[i])].push_back(i);
  auto alloc = largest_remainder(sizes_of(by), target);
  for (std::size_t c = 0; c < classes; ++c) {
    if (alloc[c] == 0 && !by[c].empty()) {
      const auto donor = static_cast<std::size_t>(
          std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
      if (alloc[donor] > 1) {
        --alloc[donor];
        ++alloc[c];
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c) {
    shuffle(by[c].begin(), by[c].end(), rng);
    out.insert(out.end(), by[c].begin(), by[c].begin() + static_cast<std::ptrdiff_t>(alloc[c]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SplitPlan subsample_train(const SplitPlan& plan, std::span<const int> labels, std::size_t classes,
                          std::size_t n_target, std::uint64_t seed) {
  if (n_target > plan.train.size()) {
    throw DataError("cannot subsample " + std::to_string(plan.train.size()) +
                    " training samples up to " + std::to_string(n_target));
  }
  std::size_t present = 0;
  {
    std::vector<bool> seen(classes, false);
    for (std::size_t i : plan.train) seen[static_cast<std::size_t>(labels[i])] = true;
    present = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  }
  if (n_target < present) {
    throw DataError("n_target " + std::to_string(n_target) + " is smaller than the " +
                    std::to_string(present) + " classes in the training set");
  }
  SplitPlan out = plan;
  out.seed = seed;
  if (n_target == plan.train.size()) return out;
  Rng rng(derive_seed(seed, {0x737562u, static_cast<std::uint64_t>(plan.fold + 1)}));
  out.train = stratified_take(plan.train, labels, classes, n_target, rng);
  const std::size_t valid_target = static_cast<std::size_t>(std::llround(
      static_cast<double>(plan.valid.size()) * static_cast<double>(n_target) /
      static_cast<double>(plan.train.size())));
  out.valid = stratified_take(plan.valid, labels, classes, valid_target, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

SyntheticData synthetic_hdlss(const SyntheticSpec& spec) {
  if (spec.latent == 0 || spec.latent > spec.features) {
    throw ConfigError("synthetic data needs 1 <= latent <= features");
  }
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.samples == 0) throw ConfigError("synthetic data needs at least one sample");
  Rng rng(derive_seed(spec.seed, {0x73796eu}));
  SyntheticData out;
  const std::size_t n = spec.samples, d = spec.features, l = spec.latent, c = spec.classes;

  if (spec.loadings) {
    if (spec.loadings->rows() != d || spec.loadings->cols() != l) {
      throw ShapeError("synthetic loadings must be features x latent");
    }
    out.loadings = *spec.loadings;
  } else {
    out.loadings = Matrix(d, l);
    for (std::size_t i = 0; i < d; ++i) {
      auto row = out.loadings.row(i);
      double norm = 0.0;
      do {
        norm = 0.0;
        for (double& w : row) {
          w = rng.normal();
          norm += w * w;
        }
      } while (norm == 0.0);
      norm = std::sqrt(norm);
      for (double& w : row) w /= norm;
    }
  }
  out.offset.assign(d, 0.0);
  if (!spec.zero_offset) {
    for (double& b : out.offset) b = rng.normal();
  }

  out.class_directions = Matrix(c, l);
  for (std::size_t k = 0; k < c; ++k) {
    auto v = out.class_directions.row(k);
    for (double& e : v) e = rng.normal();
    if (c <= l) {
      // Gram-Schmidt against earlier directions.
      for (std::size_t j = 0; j < k; ++j) {
        auto u = out.class_directions.row(j);
        double dot = 0.0;
        for (std::size_t t = 0; t < l; ++t) dot += v[t] * u[t];
        for (std::size_t t = 0; t < l; ++t) v[t] -= dot * u[t];
      }
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    for (double& e : v) e /= norm;
  }

  out.factors = Matrix(n, l);
  for (double& z : out.factors.data()) z = rng.normal();

  Dataset& data = out.data;
  data.x = Matrix(n, d);
  data.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = out.factors.row(i);
    double best = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      auto v = out.class_directions.row(k);
      double s = 0.0;
      for (std::size_t t = 0; t < l; ++t) s += v[t] * z[t];
      if (s > best) {
        best = s;
        data.y[i] = static_cast<int>(k);
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      auto w = out.loadings.row(j);
      double s = out.offset[j];
      for (std::size_t t = 0; t < l; ++t) s += w[t] * z[t];
      data.x(i, j) = s + (spec.noise_sd > 0.0 ? spec.noise_sd * rng.normal() : 0.0);
    }
  }
  for (std::size_t j = 0; j < d; ++j) data.feature_names.push_back("f" + std::to_string(j));
  for (std::size_t k = 0; k < c; ++k) data.class_names.push_back(std::to_string(k));
  return out;
}

void write_latents(const std::filesystem::path& path, std::span<const std::size_t> indices,
                   std::span<const int> labels, const Matrix& latents) {
  if (indices.size() != latents.rows() || labels.size() != latents.rows()) {
    throw ShapeError("latent export: row count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sample_index,label";
  for (std::size_t l = 0; l < latents.cols(); ++l) out << ",z_" << l;
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < latents.rows(); ++r) {
    out << indices[r] << ',' << labels[r];
    for (double v : latents.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace envae

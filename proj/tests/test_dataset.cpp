#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "envae/dataset.hpp"
#include "envae/error.hpp"
#include "envae/metrics.hpp"

using namespace envae;

namespace {

std::vector<int> labels_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<int> y;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) y.push_back(static_cast<int>(c));
  }
  return y;
}

bool disjoint(const SplitPlan& p) {
  std::set<std::size_t> s;
  for (const auto* v : {&p.train, &p.valid, &p.test}) {
    for (std::size_t i : *v) {
      if (!s.insert(i).second) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("csv parsing maps labels densely") {
  const auto d = parse_csv("f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n");
  CHECK(d.samples() == 3);
  CHECK(d.features() == 2);
  CHECK(d.classes() == 2);
  CHECK(d.y == std::vector<int>{0, 1, 0});
  CHECK(d.class_names == std::vector<std::string>{"a", "b"});
  CHECK(d.x(2, 1) == 6.0);
}

TEST_CASE("integer labels sort numerically and the label column may sit anywhere") {
  const auto d = parse_csv("y,f\n10,1\n9,2\n2,3\n", "y");
  CHECK(d.class_names == std::vector<std::string>{"2", "9", "10"});
  CHECK(d.y == std::vector<int>{2, 1, 0});
}

TEST_CASE("csv errors name the row and column") {
  try {
    parse_csv("a,b,label\n1,2,x\n3,nan,y\n");
    FAIL("expected an error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("a,label\n1,x\nfoo,y\n"), DataError);
  CHECK_THROWS_AS(parse_csv(""), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1,2\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a,label\n1,x,3\n"), DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent.csv"), DataError);
}

TEST_CASE("csv write and load round-trip") {
  SyntheticSpec s;
  s.samples = 12;
  s.features = 5;
  s.latent = 2;
  s.classes = 3;
  const auto syn = synthetic_hdlss(s);
  const auto dir = std::filesystem::path(ENVAE_TEST_TMP);
  std::filesystem::create_directories(dir);
  write_csv(syn.data, dir / "syn.csv");
  const auto back = load_csv(dir / "syn.csv");
  CHECK(back.x == syn.data.x);
  CHECK(back.y == syn.data.y);
}

TEST_CASE("min-max scaling") {
  const auto x = Matrix::from_rows({{2, 5}, {4, 5}, {6, 5}, {8, 1}});
  const std::vector<std::size_t> train{0, 1, 2};
  const auto s = fit_scaler(x, train);
  const auto y = apply_scaler(s, x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(1, 0) == 0.5);
  CHECK(y(2, 0) == 1.0);
  CHECK(y(3, 0) == 1.5);  // unclipped
  CHECK(y(0, 1) == 0.0);  // constant on train
  Dataset d;
  d.x = x;
  CHECK_THROWS_AS(apply_scaler(d), DataError);
}

TEST_CASE("largest remainder allocation") {
  const std::vector<std::size_t> c{50, 50};
  CHECK(largest_remainder(c, 20) == std::vector<std::size_t>{10, 10});
  const std::vector<std::size_t> c2{1, 1, 1};
  CHECK(largest_remainder(c2, 2) == std::vector<std::size_t>{1, 1, 0});
  const std::vector<std::size_t> c3{7, 3};
  const auto a = largest_remainder(c3, 5);
  CHECK(a[0] + a[1] == 5);
  CHECK(a == std::vector<std::size_t>{4, 1});  // 3.5 / 1.5, tie to the lower index
}

TEST_CASE("stratified split sizes and reproducibility") {
  const auto y = labels_with_counts({50, 50});
  const auto p = stratified_split(y, 2, {}, 4);
  CHECK(p.train.size() == 72);
  CHECK(p.valid.size() == 8);
  CHECK(p.test.size() == 20);
  CHECK(disjoint(p));
  CHECK(p == stratified_split(y, 2, {}, 4));
  CHECK_FALSE(p == stratified_split(y, 2, {}, 5));
  const auto small = labels_with_counts({3, 30});
  const auto q = stratified_split(small, 2, {}, 1);
  CHECK(std::count_if(q.train.begin(), q.train.end(), [&](std::size_t i) { return small[i] == 0; }) >= 1);
  CHECK_THROWS_AS(stratified_split(labels_with_counts({2, 30}), 2, {}, 1), DataError);
}

TEST_CASE("stratified folds partition the data") {
  const auto y = labels_with_counts({37, 41, 22});
  const auto folds = stratified_folds(y, 3, 5, 0.08, 9);
  CHECK(folds.size() == 5);
  std::vector<int> tested(y.size(), 0);
  for (const auto& f : folds) {
    CHECK(disjoint(f));
    CHECK(f.valid.size() == 8);
    CHECK(f.train.size() + f.valid.size() + f.test.size() == y.size());
    for (std::size_t i : f.test) ++tested[i];
    for (int c = 0; c < 3; ++c) {
      const auto n = static_cast<double>(std::count_if(f.test.begin(), f.test.end(),
                                                       [&](std::size_t i) { return y[i] == c; }));
      const double expected = static_cast<double>(std::count(y.begin(), y.end(), c)) / 5.0;
      CHECK(std::abs(n - expected) <= 1.0);
    }
  }
  CHECK(std::all_of(tested.begin(), tested.end(), [](int t) { return t == 1; }));
  CHECK_THROWS_AS(stratified_folds(labels_with_counts({3, 30}), 2, 5, 0.08, 1), DataError);
}

TEST_CASE("hundred samples give 72/8/20 folds") {
  const auto y = labels_with_counts({25, 25, 25, 25});
  for (const auto& f : stratified_folds(y, 4, 5, 0.08, 3)) {
    CHECK(f.test.size() == 20);
    CHECK(f.valid.size() == 8);
    CHECK(f.train.size() == 72);
  }
}

TEST_CASE("train subsampling keeps the test set") {
  const auto y = labels_with_counts({52, 50});
  const auto p = stratified_split(y, 2, {}, 2);
  const auto q = subsample_train(p, y, 2, 15, 3);
  CHECK(q.test == p.test);
  CHECK(q.train.size() == 15);
  CHECK(disjoint(q));
  for (std::size_t i : q.train) CHECK(std::binary_search(p.train.begin(), p.train.end(), i));
  CHECK(subsample_train(p, y, 2, p.train.size(), 3).train == p.train);
  CHECK_THROWS_AS(subsample_train(p, y, 2, 1, 3), DataError);
  CHECK_THROWS_AS(subsample_train(p, y, 2, p.train.size() + 1, 3), DataError);
}

TEST_CASE("binary train set of 10 and 10 halves to 5 and 5") {
  SplitPlan p;
  const auto y = labels_with_counts({10, 10});
  for (std::size_t i = 0; i < 20; ++i) p.train.push_back(i);
  const auto q = subsample_train(p, y, 2, 10, 1);
  CHECK(std::count_if(q.train.begin(), q.train.end(), [&](std::size_t i) { return y[i] == 0; }) == 5);
}

TEST_CASE("synthetic generator with identity loadings reproduces the factors") {
  SyntheticSpec s;
  s.samples = 20;
  s.features = 3;
  s.latent = 3;
  s.classes = 2;
  s.noise_sd = 0.0;
  s.zero_offset = true;
  s.loadings = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto syn = synthetic_hdlss(s);
  CHECK(syn.data.x == syn.factors);
}

TEST_CASE("synthetic class counts are pinned and balanced") {
  SyntheticSpec s;  // 100 x 1000, 8 factors, 4 classes
  s.seed = 7;
  const auto a = synthetic_hdlss(s);
  const auto b = synthetic_hdlss(s);
  CHECK(a.data.x == b.data.x);
  const auto counts = a.data.class_counts();
  CHECK(counts == std::vector<std::size_t>{24, 24, 26, 26});
  for (std::size_t c : counts) CHECK(c >= 10);
}

TEST_CASE("a linear probe on the generating factors recovers the labels") {
  SyntheticSpec s;
  s.samples = 1000;
  s.seed = 7;
  const auto syn = synthetic_hdlss(s);
  const std::size_t L = 8, C = 4, half = 500;
  // Softmax regression by full-batch gradient descent on the first half.
  Matrix w(C, L + 1, 0.0);
  auto scores = [&](std::size_t i) {
    std::vector<double> out(C);
    for (std::size_t c = 0; c < C; ++c) {
      out[c] = w(c, L);
      for (std::size_t l = 0; l < L; ++l) out[c] += w(c, l) * syn.factors(i, l);
    }
    return out;
  };
  for (int it = 0; it < 2000; ++it) {
    Matrix g(C, L + 1, 0.0);
    for (std::size_t i = 0; i < half; ++i) {
      auto p = scores(i);
      const double mx = *std::max_element(p.begin(), p.end());
      double z = 0;
      for (double& v : p) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double r = p[c] / z - (syn.data.y[i] == static_cast<int>(c) ? 1.0 : 0.0);
        for (std::size_t l = 0; l < L; ++l) g(c, l) += r * syn.factors(i, l);
        g(c, L) += r;
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] -= 0.5 * g.data()[k] / half;
  }
  std::vector<int> truth, pred;
  for (std::size_t i = half; i < 1000; ++i) {
    const auto p = scores(i);
    truth.push_back(syn.data.y[i]);
    pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  CHECK(balanced_accuracy(truth, pred) > 0.95);
}

TEST_CASE("latent export header") {
  const auto dir = std::filesystem::path(ENVAE_TEST_TMP);
  std::filesystem::create_directories(dir);
  const std::vector<std::size_t> idx{4, 9};
  const std::vector<int> y{1, 0};
  write_latents(dir / "z.csv", idx, y, Matrix(2, 3, 0.5));
  const auto d = load_csv(dir / "z.csv");
  CHECK(d.feature_names == std::vector<std::string>{"sample_index", "z_0", "z_1", "z_2"});
}

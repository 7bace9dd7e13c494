#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "envae/error.hpp"
#include "envae/matrix.hpp"
#include "envae/rng.hpp"

using namespace envae;

TEST_CASE("matrix construction and access") {
  Matrix m(2, 3, 1.5);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 1.5);
  m(0, 1) = 4.0;
  CHECK(m.row(0)[1] == 4.0);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  const auto r = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(r(1, 0) == 3.0);
}

TEST_CASE("matrix row and column selection") {
  const auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  const std::vector<std::size_t> rows{2, 0};
  const std::vector<std::size_t> cols{1};
  CHECK(m.select_rows(rows) == Matrix::from_rows({{7, 8, 9}, {1, 2, 3}}));
  CHECK(m.select_cols(cols) == Matrix::from_rows({{2}, {5}, {8}}));
  const std::vector<Matrix> parts{m.select_rows(rows), m.select_rows(rows)};
  CHECK(vstack(parts).rows() == 4);
}

TEST_CASE("non-finite entries are reported") {
  Matrix m(1, 2);
  CHECK(m.all_finite());
  m(0, 1) = NAN;
  CHECK_FALSE(m.all_finite());
  CHECK_THROWS_AS(require_finite(m, "probe"), NumericError);
}

TEST_CASE("rng streams are reproducible and derived seeds differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, {2}) != derive_seed(1, {3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(7, {0}) == derive_seed(7, {0}));
}

TEST_CASE("rng uniform and normal moments") {
  Rng rng(3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("uniform_index covers its range evenly") {
  Rng rng(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("shuffle permutes") {
  Rng rng(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  shuffle(w.begin(), w.end(), rng);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}

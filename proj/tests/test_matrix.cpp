// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "prolif/layer.hpp"
#include "prolif/matrix.hpp"
#include "prolif/rng.hpp"

using namespace prolif;

namespace {

template <class T>
DenseMatrix<T> random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  DenseMatrix<T> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<T>(rng.uniform(lo, hi));
  return m;
}

// Scalar triple-loop references, independent of the kernel path.
template <class T>
DenseMatrix<T> ref_nt(const DenseMatrix<T>& x, const DenseMatrix<T>& w) {
  DenseMatrix<T> y = DenseMatrix<T>::zeros(x.rows(), w.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < w.rows(); ++j) {
      T s = 0;
      for (int l = 0; l < x.cols(); ++l) s += x(i, l) * w(j, l);
      y(i, j) = s;
    }
  return y;
}
template <class T>
DenseMatrix<T> ref_nn(const DenseMatrix<T>& g, const DenseMatrix<T>& w) {
  DenseMatrix<T> y = DenseMatrix<T>::zeros(g.rows(), w.cols());
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) {
      T s = 0;
      for (int l = 0; l < g.cols(); ++l) s += g(i, l) * w(l, j);
      y(i, j) = s;
    }
  return y;
}
template <class T>
DenseMatrix<T> ref_tn(const DenseMatrix<T>& g, const DenseMatrix<T>& x) {
  DenseMatrix<T> y = DenseMatrix<T>::zeros(g.cols(), x.cols());
  for (int o = 0; o < g.cols(); ++o)
    for (int j = 0; j < x.cols(); ++j) {
      T s = 0;
      for (int l = 0; l < g.rows(); ++l) s += g(l, o) * x(l, j);
      y(o, j) = s;
    }
  return y;
}

template <class T>
double max_abs_diff(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double worst = 0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      worst = std::max(worst, std::abs(double(a(i, j)) - double(b(i, j))));
  return worst;
}

}  // namespace

TEST_CASE("matmul variants match scalar loops over assorted shapes") {
  Rng rng(17);
  // Shapes cover vector-width tails, single rows, and the layer sizes in use.
  const int shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {4, 16, 16}, {17, 33, 9},
                           {64, 64, 64}, {100, 2, 67}, {5, 130, 3}, {257, 19, 31}};
  for (auto& s : shapes) {
    const int m = s[0], n = s[1], k = s[2];
    auto x = random_matrix<double>(rng, m, k);
    auto w = random_matrix<double>(rng, n, k);
    DenseMatrix<double> y;
    matmul_nt(x, w, y, false);
    CHECK(max_abs_diff(y, ref_nt(x, w)) < 1e-12);

    auto g = random_matrix<double>(rng, m, n);
    auto wnk = random_matrix<double>(rng, n, k);
    DenseMatrix<double> z;
    matmul_nn(g, wnk, z, false);
    CHECK(max_abs_diff(z, ref_nn(g, wnk)) < 1e-12);

    DenseMatrix<double> dw;
    matmul_tn(g, x, dw, false);
    CHECK(max_abs_diff(dw, ref_tn(g, x)) < 1e-11);
  }
}

TEST_CASE("matmul accumulate adds on top of existing values") {
  Rng rng(3);
  auto x = random_matrix<float>(rng, 37, 18);
  auto w = random_matrix<float>(rng, 25, 18);
  DenseMatrix<float> y;
  matmul_nt(x, w, y, false);
  DenseMatrix<float> y2 = y;
  matmul_nt(x, w, y2, true);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j)
      CHECK(y2(i, j) == doctest::Approx(2.0f * y(i, j)).epsilon(1e-5));
}

TEST_CASE("colsum") {
  Rng rng(5);
  auto x = random_matrix<double>(rng, 41, 7);
  std::vector<double> s;
  colsum(x, s, false);
  for (int j = 0; j < 7; ++j) {
    double ref = 0;
    for (int i = 0; i < 41; ++i) ref += x(i, j);
    CHECK(s[j] == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("effective_weight basic rows") {
  LayerParams<double> layer;
  layer.v = DenseMatrix<double>(2, 2);
  layer.v(0, 0) = 3;
  layer.v(0, 1) = 4;
  layer.v(1, 0) = 1;
  layer.v(1, 1) = 0;
  layer.g = {10.0, 1.0};
  layer.b = {0.0, 0.0};
  auto w = effective_weight(layer);
  CHECK(w(0, 0) == doctest::Approx(6.0));
  CHECK(w(0, 1) == doctest::Approx(8.0));
  CHECK(w(1, 0) == doctest::Approx(1.0));
  CHECK(w(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("effective_weight matches elementwise oracle on random layers") {
  Rng rng(11);
  LayerParams<double> layer;
  layer.v = random_matrix<double>(rng, 4, 4);
  layer.g.resize(4);
  layer.b.assign(4, 0.0);
  for (auto& gv : layer.g) gv = rng.uniform(0.1, 2.0);
  auto w = effective_weight(layer);
  for (int j = 0; j < 4; ++j) {
    double norm = 0;
    for (int c = 0; c < 4; ++c) norm += layer.v(j, c) * layer.v(j, c);
    norm = std::sqrt(norm);
    for (int c = 0; c < 4; ++c) {
      const double expect = layer.g[j] * layer.v(j, c) / norm;
      CHECK(std::abs(w(j, c) - expect) < 1e-12);
    }
  }
}

TEST_CASE("effective_weight rejects zero-norm rows") {
  LayerParams<double> layer;
  layer.v = DenseMatrix<double>::zeros(1, 3);
  layer.g = {1.0};
  layer.b = {0.0};
  CHECK_THROWS_AS(effective_weight(layer), DegenerateParamError);
}

TEST_CASE("weight-norm gauge invariance: scaling v rows is a no-op") {
  Rng rng(23);
  LayerParams<double> layer;
  layer.v = random_matrix<double>(rng, 6, 9);
  layer.g.resize(6);
  layer.b.assign(6, 0.0);
  for (auto& gv : layer.g) gv = rng.uniform(0.5, 1.5);
  auto w0 = effective_weight(layer);
  for (int j = 0; j < 6; ++j) {
    const double c = rng.uniform(0.2, 8.0);
    for (int col = 0; col < 9; ++col) layer.v(j, col) *= c;
  }
  auto w1 = effective_weight(layer);
  double rel = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 9; ++j)
      rel = std::max(rel, std::abs(w1(i, j) - w0(i, j)) /
                              std::max(std::abs(w0(i, j)), 1e-30));
  CHECK(rel < 1e-12);
}

TEST_CASE("assign_effective reproduces the target bit for bit") {
  Rng rng(29);
  auto target = random_matrix<double>(rng, 5, 8);
  LayerParams<double> layer;
  layer.assign_effective(target, std::vector<double>(5, 0.25));
  auto w = effective_weight(layer);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j) CHECK(w(i, j) == target(i, j));
}

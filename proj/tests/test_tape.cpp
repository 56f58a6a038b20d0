// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "prolif/fd_check.hpp"
#include "prolif/rng.hpp"
#include "prolif/tape.hpp"

using namespace prolif;

namespace {

DenseMatrix<double> random_matrix(Rng& rng, int r, int c, double lo = -1.0,
                                  double hi = 1.0) {
  DenseMatrix<double> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

LayerParams<double> random_layer(Rng& rng, int out, int in, double scale = 1.0) {
  LayerParams<double> l;
  DenseMatrix<double> w = random_matrix(rng, out, in, -scale, scale);
  std::vector<double> b(out);
  for (auto& x : b) x = rng.uniform(-0.5, 0.5);
  l.assign_effective(w, std::move(b));
  return l;
}

// Flat parameter views over a list of layers, for finite differencing.
size_t param_count(const std::vector<LayerParams<double>>& layers) {
  size_t n = 0;
  for (const auto& l : layers) n += l.v.size() + l.g.size() + l.b.size();
  return n;
}
std::vector<double> get_flat(const std::vector<LayerParams<double>>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.v.flat().begin(), l.v.flat().end());
    out.insert(out.end(), l.g.begin(), l.g.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
  return out;
}
void set_flat(std::vector<LayerParams<double>>& layers, std::span<const double> flat) {
  size_t at = 0;
  for (auto& l : layers) {
    for (auto& x : l.v.flat()) x = flat[at++];
    for (auto& x : l.g) x = flat[at++];
    for (auto& x : l.b) x = flat[at++];
  }
}
std::vector<double> grad_flat(const std::vector<LayerParams<double>>& layers,
                              const ParamGradients<double>& grads) {
  std::vector<double> out;
  for (size_t s = 0; s < layers.size(); ++s) {
    const auto& g = grads[s];
    REQUIRE(g.allocated);
    out.insert(out.end(), g.dv.flat().begin(), g.dv.flat().end());
    out.insert(out.end(), g.dg.begin(), g.dg.end());
    out.insert(out.end(), g.db.begin(), g.db.end());
  }
  return out;
}

}  // namespace

TEST_CASE("linear forward: identity weights pass primal and tangents through") {
  LayerParams<double> l;
  DenseMatrix<double> eye = DenseMatrix<double>::zeros(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  l.assign_effective(eye, std::vector<double>(3, 0.0));

  Rng rng(1);
  auto x = random_matrix(rng, 4, 3);
  auto t = random_matrix(rng, 4, 3);
  Tape<double> tape;
  NodeId in = tape.input(x, {t});
  NodeId y = tape.linear(l, 0, in);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(tape.val(y).primal(i, j) == doctest::Approx(x(i, j)));
      CHECK(tape.val(y).tan[0](i, j) == doctest::Approx(t(i, j)));
    }
}

TEST_CASE("linear forward: bias-only layer outputs b with zero tangents") {
  LayerParams<double> l;
  l.assign_effective(DenseMatrix<double>::zeros(2, 3), {0.5, -1.5});
  Rng rng(2);
  auto x = random_matrix(rng, 5, 3);
  auto t = random_matrix(rng, 5, 3);
  Tape<double> tape;
  NodeId y = tape.linear(l, 0, tape.input(x, {t}));
  for (int i = 0; i < 5; ++i) {
    CHECK(tape.val(y).primal(i, 0) == 0.5);
    CHECK(tape.val(y).primal(i, 1) == -1.5);
    CHECK(tape.val(y).tan[0](i, 0) == 0.0);
    CHECK(tape.val(y).tan[0](i, 1) == 0.0);
  }
}

TEST_CASE("linear forward rejects width mismatch") {
  Rng rng(3);
  auto l = random_layer(rng, 2, 3);
  Tape<double> tape;
  NodeId in = tape.input(random_matrix(rng, 4, 5));
  CHECK_THROWS_AS(tape.linear(l, 0, in), DimensionError);
}

TEST_CASE("tangent channels equal directional finite differences") {
  Rng rng(4);
  auto l1 = random_layer(rng, 6, 3);
  auto l2 = random_layer(rng, 2, 6);
  auto x = random_matrix(rng, 3, 3);
  auto dir = random_matrix(rng, 3, 3);

  auto eval = [&](const DenseMatrix<double>& input) {
    Tape<double> tape;
    NodeId h = tape.linear(l1, 0, tape.input(input));
    h = tape.activation(Act::Sine, 2.5, h);
    h = tape.linear(l2, 1, h);
    h = tape.activation(Act::Softplus, 0.0, h);
    return tape.val(h).primal;
  };

  Tape<double> tape;
  NodeId h = tape.linear(l1, 0, tape.input(x, {dir}));
  h = tape.activation(Act::Sine, 2.5, h);
  h = tape.linear(l2, 1, h);
  h = tape.activation(Act::Softplus, 0.0, h);
  const auto& out = tape.val(h);

  const double eps = 1e-5;
  DenseMatrix<double> xp = x, xm = x;
  xp.axpy(eps, dir);
  xm.axpy(-eps, dir);
  auto fp = eval(xp);
  auto fm = eval(xm);
  for (int i = 0; i < out.primal.rows(); ++i)
    for (int j = 0; j < out.primal.cols(); ++j) {
      const double fd = (fp(i, j) - fm(i, j)) / (2 * eps);
      const double an = out.tan[0](i, j);
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-6);
    }
}

TEST_CASE("activation point values: sine and sigmoid at zero") {
  Tape<double> tape;
  DenseMatrix<double> z = DenseMatrix<double>::zeros(1, 1);
  DenseMatrix<double> t(1, 1);
  t(0, 0) = 0.7;
  NodeId s = tape.activation(Act::Sine, 30.0, tape.input(z, {t}));
  CHECK(tape.val(s).primal(0, 0) == 0.0);
  CHECK(tape.val(s).tan[0](0, 0) == doctest::Approx(30.0 * 0.7));
  NodeId g = tape.activation(Act::Sigmoid, 0.0, tape.input(z, {t}));
  CHECK(tape.val(g).primal(0, 0) == doctest::Approx(0.5));
  CHECK(tape.val(g).tan[0](0, 0) == doctest::Approx(0.25 * 0.7));
}

TEST_CASE("softplus stays finite and exact for large magnitudes") {
  Tape<double> tape;
  DenseMatrix<double> x(1, 3);
  x(0, 0) = 800.0;
  x(0, 1) = -800.0;
  x(0, 2) = 0.0;
  NodeId y = tape.activation(Act::Softplus, 0.0, tape.input(x));
  CHECK(tape.val(y).primal(0, 0) == doctest::Approx(800.0));
  CHECK(tape.val(y).primal(0, 1) == 0.0);
  CHECK(tape.val(y).primal(0, 2) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("JVP linearity over tangent directions") {
  Rng rng(5);
  auto l1 = random_layer(rng, 8, 4);
  auto l2 = random_layer(rng, 3, 8);
  auto x = random_matrix(rng, 6, 4);
  auto t1 = random_matrix(rng, 6, 4);
  auto t2 = random_matrix(rng, 6, 4);
  const double a = 1.7, b = -0.4;
  DenseMatrix<double> tc = t1;
  tc.scale(a);
  tc.axpy(b, t2);

  auto run = [&](std::vector<DenseMatrix<double>> tans) {
    Tape<double> tape;
    NodeId h = tape.linear(l1, 0, tape.input(x, std::move(tans)));
    h = tape.activation(Act::Sine, 30.0, h);
    h = tape.linear(l2, 1, h);
    h = tape.activation(Act::Sigmoid, 0.0, h);
    return tape.val(h);
  };
  auto both = run({t1, t2, tc});
  double worst = 0;
  for (int i = 0; i < both.primal.rows(); ++i)
    for (int j = 0; j < both.primal.cols(); ++j) {
      const double lin = a * both.tan[0](i, j) + b * both.tan[1](i, j);
      const double direct = both.tan[2](i, j);
      worst = std::max(worst, std::abs(lin - direct) /
                                  std::max({std::abs(direct), std::abs(lin), 1e-12}));
    }
  CHECK(worst < 1e-12);
}

TEST_CASE("reverse on a single linear layer: db is ones, dg is x.vhat") {
  Rng rng(6);
  auto l = random_layer(rng, 3, 4);
  auto x = random_matrix(rng, 1, 4);
  Tape<double> tape;
  NodeId y = tape.linear(l, 0, tape.input(x));
  NodeId loss = tape.sum_all(y, 1.0);
  ParamGradients<double> grads;
  grads.resize(1);
  tape.reverse(loss, grads);
  for (int j = 0; j < 3; ++j) {
    CHECK(grads[0].db[j] == 1.0);
    // dW_j = x, so dg_j = x . vhat_j.
    double norm = 0, dot = 0;
    for (int c = 0; c < 4; ++c) norm += l.v(j, c) * l.v(j, c);
    norm = std::sqrt(norm);
    for (int c = 0; c < 4; ++c) dot += x(0, c) * l.v(j, c) / norm;
    CHECK(grads[0].dg[j] == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("zero loss gives exactly zero gradients") {
  Rng rng(7);
  auto l = random_layer(rng, 3, 4);
  auto x = random_matrix(rng, 2, 4);
  Tape<double> tape;
  NodeId y = tape.linear(l, 0, tape.input(x));
  NodeId s = tape.sum_all(y, 1.0);
  NodeId zero = tape.combine(std::array{s}, std::array{0.0});
  ParamGradients<double> grads;
  grads.resize(1);
  tape.reverse(zero, grads);
  for (double v : grads[0].dv.flat()) CHECK(v == 0.0);
  for (double v : grads[0].dg) CHECK(v == 0.0);
  for (double v : grads[0].db) CHECK(v == 0.0);
}

TEST_CASE("reverse-over-forward: grad of squared tangent norm matches FD") {
  Rng rng(8);
  std::vector<LayerParams<double>> layers{random_layer(rng, 6, 2, 0.8),
                                          random_layer(rng, 4, 6, 0.8)};
  auto x = random_matrix(rng, 3, 2);
  auto t = random_matrix(rng, 3, 2);

  auto loss_of = [&](std::span<const double> flat) {
    std::vector<LayerParams<double>> local = layers;
    set_flat(local, flat);
    Tape<double> tape;
    NodeId h = tape.linear(local[0], 0, tape.input(x, {t}));
    h = tape.activation(Act::Sine, 30.0, h);
    h = tape.linear(local[1], 1, h);
    h = tape.activation(Act::Sine, 30.0, h);
    NodeId tan = tape.extract_tangent(h, 0);
    NodeId sq = tape.unary(Unary::Square, 0.0, tan);
    return tape.val(tape.sum_all(sq, 1.0)).primal(0, 0);
  };

  Tape<double> tape;
  NodeId h = tape.linear(layers[0], 0, tape.input(x, {t}));
  h = tape.activation(Act::Sine, 30.0, h);
  h = tape.linear(layers[1], 1, h);
  h = tape.activation(Act::Sine, 30.0, h);
  NodeId tan = tape.extract_tangent(h, 0);
  NodeId sq = tape.unary(Unary::Square, 0.0, tan);
  NodeId loss = tape.sum_all(sq, 1.0);
  ParamGradients<double> grads;
  grads.resize(2);
  tape.reverse(loss, grads);

  auto analytic = grad_flat(layers, grads);
  REQUIRE(analytic.size() == param_count(layers));
  const double err = finite_difference_check(
      [&](std::span<const double> p) { return loss_of(p); }, get_flat(layers),
      analytic, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("reverse through mixed structural ops matches FD") {
  Rng rng(9);
  std::vector<LayerParams<double>> layers{random_layer(rng, 6, 3)};
  auto x = random_matrix(rng, 4, 3);
  auto gt = random_matrix(rng, 4, 2);

  auto build = [&](const std::vector<LayerParams<double>>& ls, Tape<double>& tape) {
    NodeId h = tape.linear(ls[0], 0, tape.input(x));
    h = tape.activation(Act::Sigmoid, 0.0, h);
    NodeId a = tape.slice_cols(h, 0, 2);
    NodeId bpart = tape.gather_cols(h, {5, 3});
    NodeId c = tape.concat_cols(std::array{a, bpart});   // 4 cols
    c = tape.scale_cols(c, {1.0, -2.0, 0.5, 3.0});
    NodeId d = tape.slice_cols(c, 0, 2);
    NodeId e = tape.slice_cols(c, 2, 4);
    NodeId f = tape.mul(d, e);
    f = tape.scale_rows(f, {0.3, 1.1, -0.6, 2.0});
    f = tape.add_scaled(f, d, 1.0, 0.25);
    f = tape.sub_const(f, gt);
    f = tape.unary(Unary::SmoothL1, 1.0, f);
    return tape.sum_all(f, 1.0 / 4.0);
  };

  Tape<double> tape;
  NodeId loss = build(layers, tape);
  ParamGradients<double> grads;
  grads.resize(1);
  tape.reverse(loss, grads);
  auto analytic = grad_flat(layers, grads);

  const double err = finite_difference_check(
      [&](std::span<const double> p) {
        std::vector<LayerParams<double>> local = layers;
        set_flat(local, p);
        Tape<double> t2;
        return t2.val(build(local, t2)).primal(0, 0);
      },
      get_flat(layers), analytic, 1e-6);
  CHECK(err < 1e-5);
}

TEST_CASE("tape determinism: identical runs give identical gradients") {
  Rng rng(10);
  std::vector<LayerParams<double>> layers{random_layer(rng, 5, 2),
                                          random_layer(rng, 3, 5)};
  auto x = random_matrix(rng, 7, 2);
  auto t = random_matrix(rng, 7, 2);
  auto run = [&]() {
    Tape<double> tape;
    NodeId h = tape.linear(layers[0], 0, tape.input(x, {t}));
    h = tape.activation(Act::Sine, 30.0, h);
    h = tape.linear(layers[1], 1, h);
    NodeId tan = tape.extract_tangent(h, 0);
    NodeId sq = tape.unary(Unary::Square, 0.0, tan);
    NodeId loss = tape.sum_all(sq, 0.5);
    ParamGradients<double> grads;
    grads.resize(2);
    tape.reverse(loss, grads);
    return grad_flat(layers, grads);
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("tape cannot be reversed twice") {
  Rng rng(11);
  auto l = random_layer(rng, 2, 2);
  Tape<double> tape;
  NodeId y = tape.linear(l, 0, tape.input(random_matrix(rng, 2, 2)));
  NodeId loss = tape.sum_all(y, 1.0);
  ParamGradients<double> grads;
  grads.resize(1);
  tape.reverse(loss, grads);
  CHECK_THROWS_AS(tape.reverse(loss, grads), DimensionError);
}

TEST_CASE("finite_difference_check sanity") {
  auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  std::vector<double> analytic{6.0};
  CHECK(finite_difference_check(square, std::vector<double>{3.0},
                                std::span<const double>(analytic), 1e-6) < 1e-8);
  auto constant = [](std::span<const double>) { return 2.5; };
  std::vector<double> zero{0.0};
  CHECK(finite_difference_check(constant, std::vector<double>{1.0},
                                std::span<const double>(zero), 1e-6) < 1e-6);
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prolif/matrix.hpp"

namespace prolif {

// Weight-normalized affine layer: effective row j of the weight matrix is
// g[j] * v[j] / |v[j]|, so gain and direction are optimized separately.
template <class T>
struct LayerParams {
  DenseMatrix<T> v;   // out x in, direction per output row
  std::vector<T> g;   // out, per-row gain
  std::vector<T> b;   // out, bias

  int out_dim() const { return v.rows(); }
  int in_dim() const { return v.cols(); }

  // Sets v to the given effective matrix and g to its row norms, which makes
  // the effective weight reproduce `w` bit-for-bit (g/|v| divides a value by
  // itself). Zero rows are stored as g = 0 with a unit direction so the
  // positive-norm invariant on v holds.
  void assign_effective(const DenseMatrix<T>& w, std::vector<T> bias) {
    v = w;
    g.assign(w.rows(), T(0));
    for (int j = 0; j < w.rows(); ++j) {
      T s = T(0);
      const T* row = w.row(j);
      for (int c = 0; c < w.cols(); ++c) s += row[c] * row[c];
      T norm = std::sqrt(s);
      if (norm == T(0)) {
        v.row(j)[0] = T(1);
        g[j] = T(0);
      } else {
        g[j] = norm;
      }
    }
    b = std::move(bias);
  }
};

template <class T>
std::vector<T> row_norms(const DenseMatrix<T>& v) {
  std::vector<T> out(v.rows());
  for (int j = 0; j < v.rows(); ++j) {
    T s = T(0);
    const T* row = v.row(j);
    for (int c = 0; c < v.cols(); ++c) s += row[c] * row[c];
    out[j] = std::sqrt(s);
  }
  return out;
}

// W with row j = g[j] * v[j] / |v[j]|. Throws on zero-norm direction rows.
template <class T>
DenseMatrix<T> effective_weight(const LayerParams<T>& layer) {
  const int out = layer.out_dim(), in = layer.in_dim();
  check_dim(static_cast<int>(layer.g.size()) == out &&
                static_cast<int>(layer.b.size()) == out,
            "effective_weight: g/b size mismatch");
  DenseMatrix<T> w(out, in);
  std::vector<T> norms = row_norms(layer.v);
  for (int j = 0; j < out; ++j) {
    if (norms[j] == T(0))
      throw DegenerateParamError("effective_weight: zero-norm direction row " +
                                 std::to_string(j));
    const T scale = layer.g[j] / norms[j];
    const T* src = layer.v.row(j);
    T* dst = w.row(j);
    for (int c = 0; c < in; ++c) dst[c] = scale * src[c];
  }
  return w;
}

// Adjoints matching one layer's parameter shapes.
template <class T>
struct LayerGrad {
  DenseMatrix<T> dv;
  std::vector<T> dg;
  std::vector<T> db;
  bool allocated = false;

  void ensure(const LayerParams<T>& layer) {
    if (!allocated) {
      dv = DenseMatrix<T>::zeros(layer.out_dim(), layer.in_dim());
      dg.assign(layer.g.size(), T(0));
      db.assign(layer.b.size(), T(0));
      allocated = true;
    }
  }
};

// Per-layer adjoints for a whole network, indexed by layer slot.
template <class T>
struct ParamGradients {
  std::vector<LayerGrad<T>> layers;

  void resize(size_t n) { layers.resize(n); }
  size_t size() const { return layers.size(); }
  LayerGrad<T>& operator[](size_t i) { return layers[i]; }
  const LayerGrad<T>& operator[](size_t i) const { return layers[i]; }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.allocated) continue;
      if (!l.dv.all_finite()) return false;
      for (T x : l.dg)
        if (!std::isfinite(static_cast<double>(x))) return false;
      for (T x : l.db)
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }
};

// Chains an effective-weight adjoint through the (v, g) reparameterization:
//   dg_j += dW_j . vhat_j
//   dv_j += (g_j / |v_j|) * (dW_j - (dW_j . vhat_j) vhat_j)
template <class T>
void backprop_weight_norm(const LayerParams<T>& layer, const DenseMatrix<T>& dw,
                          LayerGrad<T>& grad) {
  const int out = layer.out_dim(), in = layer.in_dim();
  std::vector<T> norms = row_norms(layer.v);
  for (int j = 0; j < out; ++j) {
    const T norm = norms[j];
    if (norm == T(0))
      throw DegenerateParamError("backprop_weight_norm: zero-norm row");
    const T* vr = layer.v.row(j);
    const T* dwr = dw.row(j);
    T dot = T(0);
    for (int c = 0; c < in; ++c) dot += dwr[c] * vr[c];
    dot /= norm;  // dW_j . vhat_j
    grad.dg[j] += dot;
    const T scale = layer.g[j] / norm;
    T* dvr = grad.dv.row(j);
    for (int c = 0; c < in; ++c)
      dvr[c] += scale * (dwr[c] - dot * vr[c] / norm);
  }
}

}  // namespace prolif

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "prolif/dual.hpp"
#include "prolif/elementwise.hpp"
#include "prolif/layer.hpp"
#include "prolif/matrix.hpp"

namespace prolif {

using NodeId = int32_t;

// Records a forward pass over dual batches (primal + tangent channels) and
// replays it in exact reverse order to accumulate parameter adjoints. Scalars
// built from tangent channels are differentiated like everything else, which
// is what makes gradients of the consistency losses exact.
template <class T>
class Tape {
public:
  // ---- forward builders ----------------------------------------------------

  NodeId input(DenseMatrix<T> primal, std::vector<DenseMatrix<T>> tangents = {}) {
    return push(InputRec{}, {}, DualBatch<T>(std::move(primal), std::move(tangents)));
  }

  NodeId constant(DenseMatrix<T> primal) { return input(std::move(primal)); }

  // y = x W^T + b with W the effective weight of the layer; tangent channels
  // see W only (parameters are constants with respect to input directions).
  NodeId linear(const LayerParams<T>& layer, int slot, NodeId x) {
    const auto& xv = val(x);
    check_dim(xv.cols() == layer.in_dim(),
              "linear: input width " + std::to_string(xv.cols()) +
                  " != layer in dim " + std::to_string(layer.in_dim()));
    LinearRec rec{&layer, slot, effective_weight(layer)};
    DualBatch<T> out;
    matmul_nt(xv.primal, rec.w, out.primal, false);
    for (int i = 0; i < out.primal.rows(); ++i) {
      T* row = out.primal.row(i);
      for (int j = 0; j < out.primal.cols(); ++j) row[j] += layer.b[j];
    }
    out.tan.resize(xv.channels());
    for (int k = 0; k < xv.channels(); ++k)
      matmul_nt(xv.tan[k], rec.w, out.tan[k], false);
    return push(std::move(rec), {x}, std::move(out));
  }

  NodeId activation(Act kind, T omega, NodeId x) {
    const auto& xv = val(x);
    DualBatch<T> out;
    act_eval(kind, omega, xv.primal, out.primal);
    if (xv.channels() > 0) {
      DenseMatrix<T> d1;
      act_deriv1(kind, omega, xv.primal, d1);
      out.tan.resize(xv.channels());
      for (int k = 0; k < xv.channels(); ++k)
        mul_ew(d1, xv.tan[k], out.tan[k], false);
    }
    return push(ActRec{kind, omega}, {x}, std::move(out));
  }

  NodeId unary(Unary kind, T param, NodeId x) {
    const auto& xv = val(x);
    DualBatch<T> out;
    unary_eval(kind, param, xv.primal, out.primal);
    if (xv.channels() > 0) {
      DenseMatrix<T> d1;
      unary_deriv1(kind, param, xv.primal, d1);
      out.tan.resize(xv.channels());
      for (int k = 0; k < xv.channels(); ++k)
        mul_ew(d1, xv.tan[k], out.tan[k], false);
    }
    return push(UnaryRec{kind, param}, {x}, std::move(out));
  }

  NodeId slice_cols(NodeId x, int c0, int c1) {
    const auto& xv = val(x);
    check_dim(0 <= c0 && c0 < c1 && c1 <= xv.cols(), "slice_cols: bad range");
    DualBatch<T> out;
    out.primal = copy_cols(xv.primal, c0, c1);
    out.tan.resize(xv.channels());
    for (int k = 0; k < xv.channels(); ++k) out.tan[k] = copy_cols(xv.tan[k], c0, c1);
    return push(SliceRec{c0}, {x}, std::move(out));
  }

  NodeId concat_cols(std::span<const NodeId> xs) {
    check_dim(!xs.empty(), "concat_cols: empty input");
    std::vector<int> offsets;
    int total = 0;
    const int rows = val(xs[0]).rows();
    const int channels = val(xs[0]).channels();
    for (NodeId id : xs) {
      const auto& v = val(id);
      check_dim(v.rows() == rows && v.channels() == channels,
                "concat_cols: row/channel mismatch");
      offsets.push_back(total);
      total += v.cols();
    }
    DualBatch<T> out;
    out.primal = DenseMatrix<T>(rows, total);
    out.tan.assign(channels, DenseMatrix<T>());
    for (auto& t : out.tan) t = DenseMatrix<T>(rows, total);
    for (size_t s = 0; s < xs.size(); ++s) {
      const auto& v = val(xs[s]);
      paste_cols(v.primal, out.primal, offsets[s]);
      for (int k = 0; k < channels; ++k) paste_cols(v.tan[k], out.tan[k], offsets[s]);
    }
    return push(ConcatRec{offsets}, std::vector<NodeId>(xs.begin(), xs.end()),
                std::move(out));
  }

  // y[:, j] = x[:, idx[j]]; reverse is scatter-add.
  NodeId gather_cols(NodeId x, std::vector<int> idx) {
    const auto& xv = val(x);
    for (int c : idx) check_dim(0 <= c && c < xv.cols(), "gather_cols: bad index");
    DualBatch<T> out;
    out.primal = gather(xv.primal, idx);
    out.tan.resize(xv.channels());
    for (int k = 0; k < xv.channels(); ++k) out.tan[k] = gather(xv.tan[k], idx);
    return push(GatherRec{std::move(idx)}, {x}, std::move(out));
  }

  // y[i, j] = x[i, j] * w[j]
  NodeId scale_cols(NodeId x, std::vector<T> w) {
    const auto& xv = val(x);
    check_dim(static_cast<int>(w.size()) == xv.cols(), "scale_cols: size mismatch");
    DualBatch<T> out = map_channels(xv, [&](const DenseMatrix<T>& m) {
      DenseMatrix<T> y(m.rows(), m.cols());
      for (int i = 0; i < m.rows(); ++i) {
        const T* src = m.row(i);
        T* dst = y.row(i);
        for (int j = 0; j < m.cols(); ++j) dst[j] = src[j] * w[j];
      }
      return y;
    });
    return push(ScaleColsRec{std::move(w)}, {x}, std::move(out));
  }

  // y[i, j] = x[i, j] * w[i]
  NodeId scale_rows(NodeId x, std::vector<T> w) {
    const auto& xv = val(x);
    check_dim(static_cast<int>(w.size()) == xv.rows(), "scale_rows: size mismatch");
    DualBatch<T> out = map_channels(xv, [&](const DenseMatrix<T>& m) {
      DenseMatrix<T> y(m.rows(), m.cols());
      for (int i = 0; i < m.rows(); ++i) {
        const T* src = m.row(i);
        T* dst = y.row(i);
        for (int j = 0; j < m.cols(); ++j) dst[j] = src[j] * w[i];
      }
      return y;
    });
    return push(ScaleRowsRec{std::move(w)}, {x}, std::move(out));
  }

  NodeId add_scaled(NodeId a, NodeId b, T ca, T cb) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_dim(av.primal.same_shape(bv.primal) && av.channels() == bv.channels(),
              "add_scaled: shape mismatch");
    DualBatch<T> out;
    out.primal = lincomb(av.primal, bv.primal, ca, cb);
    out.tan.resize(av.channels());
    for (int k = 0; k < av.channels(); ++k)
      out.tan[k] = lincomb(av.tan[k], bv.tan[k], ca, cb);
    return push(AddScaledRec{ca, cb}, {a, b}, std::move(out));
  }

  NodeId mul(NodeId a, NodeId b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_dim(av.primal.same_shape(bv.primal) && av.channels() == bv.channels(),
              "mul: shape mismatch");
    DualBatch<T> out;
    mul_ew(av.primal, bv.primal, out.primal, false);
    out.tan.resize(av.channels());
    for (int k = 0; k < av.channels(); ++k) {
      mul_ew(av.tan[k], bv.primal, out.tan[k], false);
      mul_ew(av.primal, bv.tan[k], out.tan[k], true);
    }
    return push(MulRec{}, {a, b}, std::move(out));
  }

  NodeId sub_const(NodeId x, DenseMatrix<T> c) {
    const auto& xv = val(x);
    check_dim(xv.primal.same_shape(c), "sub_const: shape mismatch");
    DualBatch<T> out;
    out.primal = lincomb(xv.primal, c, T(1), T(-1));
    out.tan = xv.tan;  // constants carry no tangents
    return push(SubConstRec{}, {x}, std::move(out));
  }

  // 1x1 node: scale * sum of all entries (per channel).
  NodeId sum_all(NodeId x, T scale) {
    const auto& xv = val(x);
    DualBatch<T> out;
    out.primal = DenseMatrix<T>(1, 1);
    out.primal(0, 0) = scale * total(xv.primal);
    out.tan.resize(xv.channels());
    for (int k = 0; k < xv.channels(); ++k) {
      out.tan[k] = DenseMatrix<T>(1, 1);
      out.tan[k](0, 0) = scale * total(xv.tan[k]);
    }
    return push(SumAllRec{scale}, {x}, std::move(out));
  }

  // Weighted sum of 1x1 nodes.
  NodeId combine(std::span<const NodeId> xs, std::span<const T> coeffs) {
    check_dim(xs.size() == coeffs.size() && !xs.empty(), "combine: size mismatch");
    const int channels = val(xs[0]).channels();
    DualBatch<T> out;
    out.primal = DenseMatrix<T>::zeros(1, 1);
    out.tan.assign(channels, DenseMatrix<T>::zeros(1, 1));
    for (size_t i = 0; i < xs.size(); ++i) {
      const auto& v = val(xs[i]);
      check_dim(v.rows() == 1 && v.cols() == 1 && v.channels() == channels,
                "combine: all inputs must be scalar nodes");
      out.primal(0, 0) += coeffs[i] * v.primal(0, 0);
      for (int k = 0; k < channels; ++k) out.tan[k](0, 0) += coeffs[i] * v.tan[k](0, 0);
    }
    return push(CombineRec{std::vector<T>(coeffs.begin(), coeffs.end())},
                std::vector<NodeId>(xs.begin(), xs.end()), std::move(out));
  }

  // Reads tangent channel k out as a plain value node, so losses can be
  // ordinary functions of directional derivatives.
  NodeId extract_tangent(NodeId x, int k) {
    const auto& xv = val(x);
    check_dim(0 <= k && k < xv.channels(), "extract_tangent: bad channel");
    DualBatch<T> out;
    out.primal = xv.tan[k];
    return push(ExtractTanRec{k}, {x}, std::move(out));
  }

  // Volume compositing over depth samples. sigma is (rays x D), color is
  // (rays x 3D) with per-sample rgb triples. The output is (rays x 5):
  // [R, G, B, accumulated opacity, expected depth]. Front-to-back order,
  // running multiplicative transmittance, strict scalar exp.
  NodeId composite(NodeId sigma, NodeId color, const std::vector<T>& depths, T delta);

  // ---- access ---------------------------------------------------------------

  const DualBatch<T>& val(NodeId id) const { return nodes_[id].value; }
  const DualBatch<T>& adjoint(NodeId id) const { return nodes_[id].adj; }
  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    reversed_ = false;
  }

  // ---- reverse --------------------------------------------------------------

  // Accumulates d(loss)/d(params) into grads. loss must be a 1x1 node.
  void reverse(NodeId loss, ParamGradients<T>& grads) {
    if (reversed_) throw DimensionError("Tape::reverse: tape already consumed");
    reversed_ = true;
    const auto& lv = val(loss);
    check_dim(lv.rows() == 1 && lv.cols() == 1, "reverse: loss must be scalar");
    DenseMatrix<T> seed(1, 1);
    seed(0, 0) = T(1);
    accum(nodes_[loss].adj.primal, seed);
    for (NodeId id = loss; id >= 0; --id) {
      Node& node = nodes_[id];
      if (node.adj.primal.empty() && !any_tan(node.adj)) continue;
      backward(id, node, grads);
    }
  }

  // Seeds an arbitrary adjoint on a node (used by tests probing raw outputs).
  void seed_adjoint(NodeId id, DenseMatrix<T> primal_adj) {
    accum(nodes_[id].adj.primal, primal_adj);
  }
  void reverse_seeded(ParamGradients<T>& grads) {
    if (reversed_) throw DimensionError("Tape::reverse: tape already consumed");
    reversed_ = true;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      Node& node = nodes_[id];
      if (node.adj.primal.empty() && !any_tan(node.adj)) continue;
      backward(id, node, grads);
    }
  }

private:
  struct InputRec {};
  struct LinearRec {
    const LayerParams<T>* layer;
    int slot;
    DenseMatrix<T> w;
  };
  struct ActRec {
    Act kind;
    T omega;
  };
  struct UnaryRec {
    Unary kind;
    T param;
  };
  struct SliceRec {
    int c0;
  };
  struct ConcatRec {
    std::vector<int> offsets;
  };
  struct GatherRec {
    std::vector<int> idx;
  };
  struct ScaleColsRec {
    std::vector<T> w;
  };
  struct ScaleRowsRec {
    std::vector<T> w;
  };
  struct AddScaledRec {
    T ca, cb;
  };
  struct MulRec {};
  struct SubConstRec {};
  struct SumAllRec {
    T scale;
  };
  struct CombineRec {
    std::vector<T> coeffs;
  };
  struct ExtractTanRec {
    int channel;
  };
  struct CompositeRec {
    std::vector<T> depths;
    T delta;
    DenseMatrix<T> e;               // exp(-delta * sigma), rays x D
    DenseMatrix<T> trans;           // transmittance before sample i, rays x D
    std::vector<DenseMatrix<T>> tdot;  // per channel, same layout as trans
  };
  using Rec = std::variant<InputRec, LinearRec, ActRec, UnaryRec, SliceRec,
                           ConcatRec, GatherRec, ScaleColsRec, ScaleRowsRec,
                           AddScaledRec, MulRec, SubConstRec, SumAllRec,
                           CombineRec, ExtractTanRec, CompositeRec>;

  struct Node {
    Rec rec;
    std::vector<NodeId> inputs;
    DualBatch<T> value;
    DualBatch<T> adj;
  };

  std::vector<Node> nodes_;
  bool reversed_ = false;

  NodeId push(Rec rec, std::vector<NodeId> inputs, DualBatch<T> value) {
    nodes_.push_back(Node{std::move(rec), std::move(inputs), std::move(value), {}});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  static bool any_tan(const DualBatch<T>& d) {
    for (const auto& m : d.tan)
      if (!m.empty()) return true;
    return false;
  }

  static void accum(DenseMatrix<T>& dst, const DenseMatrix<T>& src) {
    if (src.empty()) return;
    if (dst.empty())
      dst = src;
    else
      dst.axpy(T(1), src);
  }

  // Adjoint slot for tangent channel k of node id, allocated lazily.
  DenseMatrix<T>& tan_adj(NodeId id, int k) {
    auto& adj = nodes_[id].adj;
    if (static_cast<int>(adj.tan.size()) < nodes_[id].value.channels())
      adj.tan.resize(nodes_[id].value.channels());
    return adj.tan[k];
  }
  DenseMatrix<T>& primal_adj(NodeId id) { return nodes_[id].adj.primal; }

  static DenseMatrix<T> copy_cols(const DenseMatrix<T>& m, int c0, int c1) {
    DenseMatrix<T> out(m.rows(), c1 - c0);
    for (int i = 0; i < m.rows(); ++i) {
      const T* src = m.row(i) + c0;
      T* dst = out.row(i);
      for (int j = 0; j < c1 - c0; ++j) dst[j] = src[j];
    }
    return out;
  }
  static void paste_cols(const DenseMatrix<T>& src, DenseMatrix<T>& dst, int at) {
    for (int i = 0; i < src.rows(); ++i) {
      const T* s = src.row(i);
      T* d = dst.row(i) + at;
      for (int j = 0; j < src.cols(); ++j) d[j] = s[j];
    }
  }
  static DenseMatrix<T> gather(const DenseMatrix<T>& m, const std::vector<int>& idx) {
    DenseMatrix<T> out(m.rows(), static_cast<int>(idx.size()));
    for (int i = 0; i < m.rows(); ++i) {
      const T* src = m.row(i);
      T* dst = out.row(i);
      for (size_t j = 0; j < idx.size(); ++j) dst[j] = src[idx[j]];
    }
    return out;
  }
  static DenseMatrix<T> lincomb(const DenseMatrix<T>& a, const DenseMatrix<T>& b,
                                T ca, T cb) {
    DenseMatrix<T> out(a.rows(), a.cols());
    const T* p = a.data();
    const T* q = b.data();
    T* r = out.data();
    for (size_t i = 0, n = a.size(); i < n; ++i) r[i] = ca * p[i] + cb * q[i];
    return out;
  }
  static T total(const DenseMatrix<T>& m) {
    T s = T(0);
    const T* p = m.data();
    for (size_t i = 0, n = m.size(); i < n; ++i) s += p[i];
    return s;
  }

  template <class F>
  static DualBatch<T> map_channels(const DualBatch<T>& x, F&& f) {
    DualBatch<T> out;
    out.primal = f(x.primal);
    out.tan.resize(x.channels());
    for (int k = 0; k < x.channels(); ++k) out.tan[k] = f(x.tan[k]);
    return out;
  }

  static void accum_scaled(DenseMatrix<T>& dst, const DenseMatrix<T>& src, T c) {
    if (src.empty()) return;
    if (dst.empty()) dst = DenseMatrix<T>::zeros(src.rows(), src.cols());
    dst.axpy(c, src);
  }

  // Applies fn(output-adjoint, input-adjoint-slot) for the primal channel and
  // every present tangent channel; tangent adjoints route channel-to-channel,
  // which is exact for channel-wise linear ops.
  template <class F>
  void for_each_channel(const DualBatch<T>& out_adj, NodeId x, F&& fn) {
    if (!out_adj.primal.empty()) fn(out_adj.primal, primal_adj(x));
    for (size_t k = 0; k < out_adj.tan.size(); ++k)
      if (!out_adj.tan[k].empty()) fn(out_adj.tan[k], tan_adj(x, static_cast<int>(k)));
  }

  void backward(NodeId id, Node& node, ParamGradients<T>& grads);
  void backward_composite(Node& node, const CompositeRec& rec);
};

// ---- backward implementations ----------------------------------------------

template <class T>
void Tape<T>::backward(NodeId, Node& node, ParamGradients<T>& grads) {
  const DualBatch<T>& out_adj = node.adj;
  std::visit(
      [&](auto&& rec) {
        using R = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<R, InputRec>) {
          // leaf
        } else if constexpr (std::is_same_v<R, LinearRec>) {
          const NodeId x = node.inputs[0];
          const DualBatch<T>& xv = val(x);
          LayerGrad<T>& lg = grads[rec.slot];
          lg.ensure(*rec.layer);
          DenseMatrix<T> dw;
          bool have_dw = false;
          if (!out_adj.primal.empty()) {
            matmul_nn(out_adj.primal, rec.w, primal_adj(x), !primal_adj(x).empty());
            matmul_tn(out_adj.primal, xv.primal, dw, false);
            have_dw = true;
            colsum(out_adj.primal, lg.db, true);
          }
          for (size_t k = 0; k < out_adj.tan.size(); ++k) {
            if (out_adj.tan[k].empty()) continue;
            auto& xt = tan_adj(x, static_cast<int>(k));
            matmul_nn(out_adj.tan[k], rec.w, xt, !xt.empty());
            matmul_tn(out_adj.tan[k], xv.tan[k], dw, have_dw);
            have_dw = true;
          }
          if (have_dw) backprop_weight_norm(*rec.layer, dw, lg);
        } else if constexpr (std::is_same_v<R, ActRec> || std::is_same_v<R, UnaryRec>) {
          const NodeId x = node.inputs[0];
          const DualBatch<T>& xv = val(x);
          DenseMatrix<T> d1;
          if constexpr (std::is_same_v<R, ActRec>)
            act_deriv1(rec.kind, rec.omega, xv.primal, d1);
          else
            unary_deriv1(rec.kind, rec.param, xv.primal, d1);
          bool need_d2 = false;
          for (size_t k = 0; k < out_adj.tan.size(); ++k)
            if (!out_adj.tan[k].empty()) need_d2 = true;
          if (!out_adj.primal.empty()) {
            auto& xa = primal_adj(x);
            mul_ew(out_adj.primal, d1, xa, !xa.empty());
          }
          if (need_d2 && xv.channels() > 0) {
            DenseMatrix<T> d2;
            if constexpr (std::is_same_v<R, ActRec>)
              act_deriv2(rec.kind, rec.omega, xv.primal, d2);
            else
              unary_deriv2(rec.kind, rec.param, xv.primal, d2);
            auto& xa = primal_adj(x);
            for (size_t k = 0; k < out_adj.tan.size(); ++k) {
              if (out_adj.tan[k].empty()) continue;
              mul3_ew(out_adj.tan[k], d2, xv.tan[k], xa, !xa.empty());
              auto& xt = tan_adj(x, static_cast<int>(k));
              mul_ew(out_adj.tan[k], d1, xt, !xt.empty());
            }
          }
        } else if constexpr (std::is_same_v<R, SliceRec>) {
          const NodeId x = node.inputs[0];
          for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
            if (xa.empty()) xa = DenseMatrix<T>::zeros(val(x).rows(), val(x).cols());
            for (int i = 0; i < oa.rows(); ++i) {
              const T* s = oa.row(i);
              T* d = xa.row(i) + rec.c0;
              for (int j = 0; j < oa.cols(); ++j) d[j] += s[j];
            }
          });
        } else if constexpr (std::is_same_v<R, ConcatRec>) {
          for (size_t s = 0; s < node.inputs.size(); ++s) {
            const NodeId x = node.inputs[s];
            const int c0 = rec.offsets[s];
            const int w = val(x).cols();
            for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
              if (xa.empty()) xa = DenseMatrix<T>::zeros(val(x).rows(), w);
              for (int i = 0; i < oa.rows(); ++i) {
                const T* src = oa.row(i) + c0;
                T* dst = xa.row(i);
                for (int j = 0; j < w; ++j) dst[j] += src[j];
              }
            });
          }
        } else if constexpr (std::is_same_v<R, GatherRec>) {
          const NodeId x = node.inputs[0];
          for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
            if (xa.empty()) xa = DenseMatrix<T>::zeros(val(x).rows(), val(x).cols());
            for (int i = 0; i < oa.rows(); ++i) {
              const T* s = oa.row(i);
              T* d = xa.row(i);
              for (size_t j = 0; j < rec.idx.size(); ++j) d[rec.idx[j]] += s[j];
            }
          });
        } else if constexpr (std::is_same_v<R, ScaleColsRec>) {
          const NodeId x = node.inputs[0];
          for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
            if (xa.empty()) xa = DenseMatrix<T>::zeros(oa.rows(), oa.cols());
            for (int i = 0; i < oa.rows(); ++i) {
              const T* s = oa.row(i);
              T* d = xa.row(i);
              for (int j = 0; j < oa.cols(); ++j) d[j] += s[j] * rec.w[j];
            }
          });
        } else if constexpr (std::is_same_v<R, ScaleRowsRec>) {
          const NodeId x = node.inputs[0];
          for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
            if (xa.empty()) xa = DenseMatrix<T>::zeros(oa.rows(), oa.cols());
            for (int i = 0; i < oa.rows(); ++i) {
              const T* s = oa.row(i);
              T* d = xa.row(i);
              for (int j = 0; j < oa.cols(); ++j) d[j] += s[j] * rec.w[i];
            }
          });
        } else if constexpr (std::is_same_v<R, AddScaledRec>) {
          for_each_channel(out_adj, node.inputs[0],
                           [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
                             accum_scaled(xa, oa, rec.ca);
                           });
          for_each_channel(out_adj, node.inputs[1],
                           [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
                             accum_scaled(xa, oa, rec.cb);
                           });
        } else if constexpr (std::is_same_v<R, MulRec>) {
          const NodeId a = node.inputs[0];
          const NodeId b = node.inputs[1];
          const DualBatch<T>& av = val(a);
          const DualBatch<T>& bv = val(b);
          if (!out_adj.primal.empty()) {
            auto& aa = primal_adj(a);
            mul_ew(out_adj.primal, bv.primal, aa, !aa.empty());
            auto& ba = primal_adj(b);
            mul_ew(out_adj.primal, av.primal, ba, !ba.empty());
          }
          for (size_t k = 0; k < out_adj.tan.size(); ++k) {
            if (out_adj.tan[k].empty()) continue;
            auto& aa = primal_adj(a);
            mul_ew(out_adj.tan[k], bv.tan[k], aa, !aa.empty());
            auto& at = tan_adj(a, static_cast<int>(k));
            mul_ew(out_adj.tan[k], bv.primal, at, !at.empty());
            auto& ba = primal_adj(b);
            mul_ew(out_adj.tan[k], av.tan[k], ba, !ba.empty());
            auto& bt = tan_adj(b, static_cast<int>(k));
            mul_ew(out_adj.tan[k], av.primal, bt, !bt.empty());
          }
        } else if constexpr (std::is_same_v<R, SubConstRec>) {
          for_each_channel(out_adj, node.inputs[0],
                           [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
                             accum(xa, oa);
                           });
        } else if constexpr (std::is_same_v<R, SumAllRec>) {
          const NodeId x = node.inputs[0];
          for_each_channel(out_adj, x, [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
            const T a = rec.scale * oa(0, 0);
            if (xa.empty()) xa = DenseMatrix<T>::zeros(val(x).rows(), val(x).cols());
            T* d = xa.data();
            for (size_t i = 0, n = xa.size(); i < n; ++i) d[i] += a;
          });
        } else if constexpr (std::is_same_v<R, CombineRec>) {
          for (size_t s = 0; s < node.inputs.size(); ++s) {
            for_each_channel(out_adj, node.inputs[s],
                             [&](const DenseMatrix<T>& oa, DenseMatrix<T>& xa) {
                               accum_scaled(xa, oa, rec.coeffs[s]);
                             });
          }
        } else if constexpr (std::is_same_v<R, ExtractTanRec>) {
          if (!out_adj.primal.empty()) {
            auto& xt = tan_adj(node.inputs[0], rec.channel);
            accum(xt, out_adj.primal);
          }
        } else if constexpr (std::is_same_v<R, CompositeRec>) {
          backward_composite(node, rec);
        }
      },
      node.rec);
}

}  // namespace prolif

#include "prolif/tape_composite.hpp"

// SPDX-License-Identifier: Apache-2.0
//
// Fused volume-compositing tape op. Forward runs front to back per ray with a
// running multiplicative transmittance:
//
//   e_i = exp(-delta * sigma_i)        alpha_i = 1 - e_i
//   w_i = T_i * alpha_i                T_{i+1} = T_i * e_i,  T_0 = 1
//   C += w_i c_i     acc += w_i        dhat += w_i d_i
//
// Tangent channels propagate through the same recurrence; the reverse pass
// replays it backwards, chaining adjoints through both primal and tangent
// arithmetic. No divisions anywhere, so opaque samples (alpha -> 1) are safe.

#pragma once

#include <stdexcept>

#include "prolif/tape.hpp"

namespace prolif {

template <class T>
NodeId Tape<T>::composite(NodeId sigma, NodeId color, const std::vector<T>& depths,
                          T delta) {
  const auto& sv = val(sigma);
  const auto& cv = val(color);
  const int m = sv.rows();
  const int depth_n = sv.cols();
  check_dim(static_cast<int>(depths.size()) == depth_n,
            "composite: sample count != depth count");
  check_dim(cv.rows() == m && cv.cols() == 3 * depth_n,
            "composite: color shape mismatch");
  check_dim(sv.channels() == cv.channels(), "composite: tangent channel mismatch");
  {
    const T* sp = sv.primal.data();
    for (size_t i = 0, n = sv.primal.size(); i < n; ++i)
      if (sp[i] < T(0))
        throw std::invalid_argument("composite: negative density");
  }
  const int channels = sv.channels();

  CompositeRec rec{depths, delta, DenseMatrix<T>(m, depth_n),
                   DenseMatrix<T>(m, depth_n), {}};
  rec.tdot.resize(channels);
  for (auto& t : rec.tdot) t = DenseMatrix<T>(m, depth_n);

  DualBatch<T> out;
  out.primal = DenseMatrix<T>(m, 5);
  out.tan.assign(channels, DenseMatrix<T>());
  for (auto& t : out.tan) t = DenseMatrix<T>::zeros(m, 5);

  std::vector<T> tdot_cur(channels);
  for (int r = 0; r < m; ++r) {
    const T* srow = sv.primal.row(r);
    const T* crow = cv.primal.row(r);
    T* erow = rec.e.row(r);
    T* trow = rec.trans.row(r);
    T out_acc[5] = {T(0), T(0), T(0), T(0), T(0)};
    T tcur = T(1);
    for (int k = 0; k < channels; ++k) tdot_cur[k] = T(0);
    for (int i = 0; i < depth_n; ++i) {
      const T s = srow[i];
      const T e = detail::exp_strict(-delta * s);
      const T a = T(1) - e;
      const T w = tcur * a;
      const T* c = crow + 3 * i;
      out_acc[0] += w * c[0];
      out_acc[1] += w * c[1];
      out_acc[2] += w * c[2];
      out_acc[3] += w;
      out_acc[4] += w * depths[i];
      erow[i] = e;
      trow[i] = tcur;
      for (int k = 0; k < channels; ++k) {
        const T sdot = sv.tan[k].row(r)[i];
        const T edot = -delta * e * sdot;
        const T adot = -edot;
        const T td = tdot_cur[k];
        rec.tdot[k].row(r)[i] = td;
        const T wdot = td * a + tcur * adot;
        const T* cd = cv.tan[k].row(r) + 3 * i;
        T* ok = out.tan[k].row(r);
        ok[0] += wdot * c[0] + w * cd[0];
        ok[1] += wdot * c[1] + w * cd[1];
        ok[2] += wdot * c[2] + w * cd[2];
        ok[3] += wdot;
        ok[4] += wdot * depths[i];
        tdot_cur[k] = td * e + tcur * edot;
      }
      tcur *= e;
    }
    T* orow = out.primal.row(r);
    for (int j = 0; j < 5; ++j) orow[j] = out_acc[j];
  }
  return push(std::move(rec), {sigma, color}, std::move(out));
}

template <class T>
void Tape<T>::backward_composite(Node& node, const CompositeRec& rec) {
  const NodeId sigma = node.inputs[0];
  const NodeId color = node.inputs[1];
  const DualBatch<T>& sv = val(sigma);
  const DualBatch<T>& cv = val(color);
  const int m = sv.rows();
  const int depth_n = sv.cols();
  const T delta = rec.delta;

  std::vector<int> active;
  for (size_t k = 0; k < node.adj.tan.size(); ++k)
    if (!node.adj.tan[k].empty()) active.push_back(static_cast<int>(k));
  const bool has_primal = !node.adj.primal.empty();
  if (!has_primal && active.empty()) return;

  DenseMatrix<T>& sbar = primal_adj(sigma);
  if (sbar.empty()) sbar = DenseMatrix<T>::zeros(m, depth_n);
  DenseMatrix<T>& cbar = primal_adj(color);
  if (cbar.empty()) cbar = DenseMatrix<T>::zeros(m, 3 * depth_n);
  std::vector<DenseMatrix<T>*> sdotbar(active.size());
  std::vector<DenseMatrix<T>*> cdotbar(active.size());
  for (size_t a = 0; a < active.size(); ++a) {
    DenseMatrix<T>& st = tan_adj(sigma, active[a]);
    if (st.empty()) st = DenseMatrix<T>::zeros(m, depth_n);
    sdotbar[a] = &st;
    DenseMatrix<T>& ct = tan_adj(color, active[a]);
    if (ct.empty()) ct = DenseMatrix<T>::zeros(m, 3 * depth_n);
    cdotbar[a] = &ct;
  }

  std::vector<T> tdotbar_after(active.size());
  for (int r = 0; r < m; ++r) {
    const T* srow = sv.primal.row(r);
    const T* crow = cv.primal.row(r);
    const T* erow = rec.e.row(r);
    const T* trow = rec.trans.row(r);
    const T* gp = has_primal ? node.adj.primal.row(r) : nullptr;
    T tbar_after = T(0);
    for (size_t a = 0; a < active.size(); ++a) tdotbar_after[a] = T(0);

    for (int i = depth_n - 1; i >= 0; --i) {
      const T e = erow[i];
      const T tprev = trow[i];
      const T a_val = T(1) - e;
      const T w = tprev * a_val;
      const T di = rec.depths[i];
      const T* c = crow + 3 * i;

      // T_{i+1} = T_i * e_i
      T tbar_i = tbar_after * e;
      T ebar = tbar_after * tprev;
      T abar = T(0);

      for (size_t a = 0; a < active.size(); ++a) {
        const int k = active[a];
        const T* gd = node.adj.tan[k].row(r);
        const T sdot = sv.tan[k].row(r)[i];
        const T edot = -delta * e * sdot;
        const T adot = -edot;
        const T td = rec.tdot[k].row(r)[i];
        const T wdot = td * a_val + tprev * adot;

        // Tdot_{i+1} = Tdot_i * e + T_i * edot
        T tdb = tdotbar_after[a] * e;
        ebar += tdotbar_after[a] * td;
        tbar_i += tdotbar_after[a] * edot;
        T edotbar = tdotbar_after[a] * tprev;

        // tangent outputs: Cdot += wdot*c + w*cdot ; accdot += wdot ; dhdot += wdot*d
        const T wdotbar =
            gd[3] + gd[4] * di + gd[0] * c[0] + gd[1] * c[1] + gd[2] * c[2];
        T* cb = cbar.row(r) + 3 * i;
        cb[0] += gd[0] * wdot;
        cb[1] += gd[1] * wdot;
        cb[2] += gd[2] * wdot;
        T* cdb = cdotbar[a]->row(r) + 3 * i;
        cdb[0] += gd[0] * w;
        cdb[1] += gd[1] * w;
        cdb[2] += gd[2] * w;

        // wdot = Tdot_i * a + T_i * adot
        tdb += wdotbar * a_val;
        abar += wdotbar * td;
        tbar_i += wdotbar * adot;
        T adotbar = wdotbar * tprev;

        // adot = -edot ; edot = -delta * e * sdot
        edotbar -= adotbar;
        ebar += -delta * sdot * edotbar;
        sdotbar[a]->row(r)[i] += -delta * e * edotbar;
        tdotbar_after[a] = tdb;
      }

      // primal outputs: C += w*c ; acc += w ; dhat += w*d
      T wbar = T(0);
      if (gp) {
        wbar = gp[3] + gp[4] * di + gp[0] * c[0] + gp[1] * c[1] + gp[2] * c[2];
        T* cb = cbar.row(r) + 3 * i;
        cb[0] += gp[0] * w;
        cb[1] += gp[1] * w;
        cb[2] += gp[2] * w;
      }

      // w = T_i * a ; a = 1 - e ; e = exp(-delta * sigma)
      tbar_i += wbar * a_val;
      abar += wbar * tprev;
      ebar -= abar;
      sbar.row(r)[i] += -delta * e * ebar;
      tbar_after = tbar_i;
    }
    (void)srow;
  }
}

}  // namespace prolif

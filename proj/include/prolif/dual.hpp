// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "prolif/matrix.hpp"

namespace prolif {

// A batch value together with K simultaneously propagated directional
// derivatives. K is 0 for plain fitting passes and 4 for regularization
// passes (one channel per two-plane coordinate).
template <class T>
struct DualBatch {
  DenseMatrix<T> primal;
  std::vector<DenseMatrix<T>> tan;

  DualBatch() = default;
  explicit DualBatch(DenseMatrix<T> p) : primal(std::move(p)) {}
  DualBatch(DenseMatrix<T> p, std::vector<DenseMatrix<T>> t)
      : primal(std::move(p)), tan(std::move(t)) {
    for (const auto& m : tan)
      check_dim(m.same_shape(primal), "DualBatch: tangent shape mismatch");
  }

  int channels() const { return static_cast<int>(tan.size()); }
  int rows() const { return primal.rows(); }
  int cols() const { return primal.cols(); }
  bool empty() const { return primal.empty(); }
};

}  // namespace prolif

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prolif/common.hpp"

namespace prolif {

// Process-wide accounting of live matrix bytes; render paths report the peak
// against the configured memory budget.
struct MatrixBytes {
  static std::atomic<size_t>& live() {
    static std::atomic<size_t> v{0};
    return v;
  }
  static std::atomic<size_t>& peak() {
    static std::atomic<size_t> v{0};
    return v;
  }
  static void add(size_t n) {
    size_t cur = live().fetch_add(n) + n;
    size_t pk = peak().load();
    while (cur > pk && !peak().compare_exchange_weak(pk, cur)) {
    }
  }
  static void sub(size_t n) { live().fetch_sub(n); }
  static void reset_peak() { peak().store(live().load()); }
};

// Dense row-major matrix. Storage is deliberately left uninitialized on
// construction; callers assign every entry or use zeros().
template <class T>
class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(int rows, int cols) { allocate(rows, cols); }

  DenseMatrix(const DenseMatrix& o) {
    allocate(o.rows_, o.cols_);
    std::memcpy(data_.get(), o.data_.get(), bytes());
  }
  DenseMatrix& operator=(const DenseMatrix& o) {
    if (this != &o) {
      release();
      allocate(o.rows_, o.cols_);
      std::memcpy(data_.get(), o.data_.get(), bytes());
    }
    return *this;
  }
  DenseMatrix(DenseMatrix&& o) noexcept { swap(o); }
  DenseMatrix& operator=(DenseMatrix&& o) noexcept {
    if (this != &o) {
      release();
      rows_ = cols_ = 0;
      data_.reset();
      swap(o);
    }
    return *this;
  }
  ~DenseMatrix() { release(); }

  static DenseMatrix zeros(int rows, int cols) {
    DenseMatrix m(rows, cols);
    std::memset(m.data_.get(), 0, m.bytes());
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return static_cast<size_t>(rows_) * cols_; }
  size_t bytes() const { return size() * sizeof(T); }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }
  T* row(int i) { return data_.get() + static_cast<size_t>(i) * cols_; }
  const T* row(int i) const { return data_.get() + static_cast<size_t>(i) * cols_; }
  T& operator()(int i, int j) { return row(i)[j]; }
  const T& operator()(int i, int j) const { return row(i)[j]; }

  std::span<T> flat() { return {data_.get(), size()}; }
  std::span<const T> flat() const { return {data_.get(), size()}; }

  void fill(T v) {
    T* p = data_.get();
    for (size_t i = 0, n = size(); i < n; ++i) p[i] = v;
  }
  void set_zero() { std::memset(data_.get(), 0, bytes()); }

  bool same_shape(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    const T* p = data_.get();
    for (size_t i = 0, n = size(); i < n; ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  }

  // y += a * x, shapes must match.
  void axpy(T a, const DenseMatrix& x) {
    check_dim(same_shape(x), "axpy: shape mismatch");
    T* p = data_.get();
    const T* q = x.data();
    for (size_t i = 0, n = size(); i < n; ++i) p[i] += a * q[i];
  }

  void scale(T a) {
    T* p = data_.get();
    for (size_t i = 0, n = size(); i < n; ++i) p[i] *= a;
  }

private:
  void allocate(int rows, int cols) {
    rows_ = rows;
    cols_ = cols;
    if (size() > 0) {
      data_ = std::make_unique_for_overwrite<T[]>(size());
      MatrixBytes::add(bytes());
    }
  }
  void release() {
    if (data_) MatrixBytes::sub(bytes());
  }
  void swap(DenseMatrix& o) {
    std::swap(rows_, o.rows_);
    std::swap(cols_, o.cols_);
    std::swap(data_, o.data_);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::unique_ptr<T[]> data_;
};

// ---- GEMM entry points -----------------------------------------------------
// Shapes follow the layer convention: activations are (batch x features),
// weights are (out x in).

namespace detail {
// C (MxN) = [accumulate ? C : 0] + A (MxK) * B (KxN); all row-major with the
// given leading dimensions. Per-element accumulation runs over k ascending in
// every code path, so results are reproducible for a fixed build and host.
template <class T>
void gemm_core(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int m,
               int n, int k, bool accumulate);
}  // namespace detail

// y (m x out) (+)= x (m x in) * W^T, W is (out x in).
template <class T>
void matmul_nt(const DenseMatrix<T>& x, const DenseMatrix<T>& w,
               DenseMatrix<T>& y, bool accumulate);

// y (m x in) (+)= g (m x out) * W, W is (out x in).
template <class T>
void matmul_nn(const DenseMatrix<T>& g, const DenseMatrix<T>& w,
               DenseMatrix<T>& y, bool accumulate);

// dW (out x in) (+)= g^T (out x m) * x (m x in); g is (m x out).
template <class T>
void matmul_tn(const DenseMatrix<T>& g, const DenseMatrix<T>& x,
               DenseMatrix<T>& dw, bool accumulate);

// out[j] (+)= sum_i x(i, j).
template <class T>
void colsum(const DenseMatrix<T>& x, std::vector<T>& out, bool accumulate);

// Human-readable shape, for error messages.
template <class T>
std::string shape_str(const DenseMatrix<T>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace prolif

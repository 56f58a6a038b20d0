// SPDX-License-Identifier: Apache-2.0

#include <cstddef>
#include <vector>

#include "prolif/matrix.hpp"

namespace prolif::detail {

void gemm_avx512_f32(const float* a, int lda, const float* b, int ldb, float* c,
                     int ldc, int m, int n, int k, bool accumulate);
void gemm_avx512_f64(const double* a, int lda, const double* b, int ldb,
                     double* c, int ldc, int m, int n, int k, bool accumulate);

namespace {

bool have_avx512() {
  static const bool ok = __builtin_cpu_supports("avx512f");
  return ok;
}

// Portable path. The j-inner loop keeps the per-element accumulation order
// (k ascending) identical to the vector kernels.
template <class T>
void gemm_scalar(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int m,
                 int n, int k, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<size_t>(i) * ldc;
    if (!accumulate)
      for (int j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + static_cast<size_t>(i) * lda;
    for (int l = 0; l < k; ++l) {
      const T al = ai[l];
      const T* bl = b + static_cast<size_t>(l) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += al * bl[j];
    }
  }
}

template <class T>
void gemm_dispatch(const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                   int m, int n, int k, bool accumulate);

template <>
void gemm_dispatch<float>(const float* a, int lda, const float* b, int ldb,
                          float* c, int ldc, int m, int n, int k,
                          bool accumulate) {
  if (have_avx512())
    gemm_avx512_f32(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
  else
    gemm_scalar(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
}

template <>
void gemm_dispatch<double>(const double* a, int lda, const double* b, int ldb,
                           double* c, int ldc, int m, int n, int k,
                           bool accumulate) {
  if (have_avx512())
    gemm_avx512_f64(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
  else
    gemm_scalar(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
}

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <class T>
void pack_transpose(const T* src, int rows, int cols, T* dst) {
  // dst is cols x rows.
  for (int i = 0; i < rows; ++i) {
    const T* s = src + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) dst[static_cast<size_t>(j) * rows + i] = s[j];
  }
}

}  // namespace

template <class T>
void gemm_core(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int m,
               int n, int k, bool accumulate) {
  gemm_dispatch<T>(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
}

template void gemm_core<float>(const float*, int, const float*, int, float*,
                               int, int, int, int, bool);
template void gemm_core<double>(const double*, int, const double*, int, double*,
                                int, int, int, int, bool);

}  // namespace prolif::detail

namespace prolif {

template <class T>
void matmul_nt(const DenseMatrix<T>& x, const DenseMatrix<T>& w,
               DenseMatrix<T>& y, bool accumulate) {
  check_dim(x.cols() == w.cols(),
            "matmul_nt: inner dims " + shape_str(x) + " vs " + shape_str(w));
  const int m = x.rows(), in = x.cols(), out = w.rows();
  if (y.rows() != m || y.cols() != out) {
    check_dim(!accumulate, "matmul_nt: accumulate into wrong shape");
    y = DenseMatrix<T>(m, out);
  }
  auto& buf = detail::scratch<T>();
  buf.resize(static_cast<size_t>(in) * out);
  detail::pack_transpose(w.data(), out, in, buf.data());  // in x out
  detail::gemm_core<T>(x.data(), in, buf.data(), out, y.data(), out, m, out, in,
                       accumulate);
}

template <class T>
void matmul_nn(const DenseMatrix<T>& g, const DenseMatrix<T>& w,
               DenseMatrix<T>& y, bool accumulate) {
  check_dim(g.cols() == w.rows(),
            "matmul_nn: inner dims " + shape_str(g) + " vs " + shape_str(w));
  const int m = g.rows(), out = g.cols(), in = w.cols();
  if (y.rows() != m || y.cols() != in) {
    check_dim(!accumulate, "matmul_nn: accumulate into wrong shape");
    y = DenseMatrix<T>(m, in);
  }
  detail::gemm_core<T>(g.data(), out, w.data(), in, y.data(), in, m, in, out,
                       accumulate);
}

template <class T>
void matmul_tn(const DenseMatrix<T>& g, const DenseMatrix<T>& x,
               DenseMatrix<T>& dw, bool accumulate) {
  check_dim(g.rows() == x.rows(),
            "matmul_tn: batch dims " + shape_str(g) + " vs " + shape_str(x));
  const int m = g.rows(), out = g.cols(), in = x.cols();
  if (dw.rows() != out || dw.cols() != in) {
    check_dim(!accumulate, "matmul_tn: accumulate into wrong shape");
    dw = DenseMatrix<T>(out, in);
  }
  auto& buf = detail::scratch<T>();
  buf.resize(static_cast<size_t>(m) * out);
  detail::pack_transpose(g.data(), m, out, buf.data());  // out x m
  // Stream x through L2 in row blocks, accumulating into the small output.
  const int block = 1024;
  for (int l0 = 0; l0 < m; l0 += block) {
    const int kb = std::min(block, m - l0);
    detail::gemm_core<T>(buf.data() + l0, m, x.data() + static_cast<size_t>(l0) * in,
                         in, dw.data(), in, out, in, kb,
                         accumulate || l0 > 0);
  }
  if (m == 0 && !accumulate) dw.set_zero();
}

template <class T>
void colsum(const DenseMatrix<T>& x, std::vector<T>& out, bool accumulate) {
  const int n = x.cols();
  if (static_cast<int>(out.size()) != n) {
    check_dim(!accumulate, "colsum: accumulate into wrong size");
    out.assign(n, T(0));
  } else if (!accumulate) {
    std::fill(out.begin(), out.end(), T(0));
  }
  for (int i = 0; i < x.rows(); ++i) {
    const T* r = x.row(i);
    for (int j = 0; j < n; ++j) out[j] += r[j];
  }
}

template void matmul_nt<float>(const DenseMatrix<float>&, const DenseMatrix<float>&,
                               DenseMatrix<float>&, bool);
template void matmul_nt<double>(const DenseMatrix<double>&, const DenseMatrix<double>&,
                                DenseMatrix<double>&, bool);
template void matmul_nn<float>(const DenseMatrix<float>&, const DenseMatrix<float>&,
                               DenseMatrix<float>&, bool);
template void matmul_nn<double>(const DenseMatrix<double>&, const DenseMatrix<double>&,
                                DenseMatrix<double>&, bool);
template void matmul_tn<float>(const DenseMatrix<float>&, const DenseMatrix<float>&,
                               DenseMatrix<float>&, bool);
template void matmul_tn<double>(const DenseMatrix<double>&, const DenseMatrix<double>&,
                                DenseMatrix<double>&, bool);
template void colsum<float>(const DenseMatrix<float>&, std::vector<float>&, bool);
template void colsum<double>(const DenseMatrix<double>&, std::vector<double>&, bool);

}  // namespace prolif

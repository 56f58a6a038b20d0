// SPDX-License-Identifier: Apache-2.0
//
// AVX-512 GEMM microkernels for the layer shapes this engine actually runs:
// batch dimension in the tens of thousands, feature dimensions 2..1024.
// This translation unit is compiled with -mavx512f and must only be entered
// after a runtime cpu check (see simd_gemm.cpp).

#include <immintrin.h>

#include <algorithm>

namespace prolif::detail {

namespace {

template <class T>
struct V;

template <>
struct V<float> {
  using reg = __m512;
  using mask = __mmask16;
  static constexpr int VL = 16;
  static reg load(const float* p) { return _mm512_loadu_ps(p); }
  static reg maskz_load(mask m, const float* p) { return _mm512_maskz_loadu_ps(m, p); }
  static void store(float* p, reg r) { _mm512_storeu_ps(p, r); }
  static void mask_store(float* p, mask m, reg r) { _mm512_mask_storeu_ps(p, m, r); }
  static reg set1(float x) { return _mm512_set1_ps(x); }
  static reg zero() { return _mm512_setzero_ps(); }
  static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_ps(a, b, c); }
  static mask tail_mask(int n) { return static_cast<mask>((1u << n) - 1u); }
};

template <>
struct V<double> {
  using reg = __m512d;
  using mask = __mmask8;
  static constexpr int VL = 8;
  static reg load(const double* p) { return _mm512_loadu_pd(p); }
  static reg maskz_load(mask m, const double* p) { return _mm512_maskz_loadu_pd(m, p); }
  static void store(double* p, reg r) { _mm512_storeu_pd(p, r); }
  static void mask_store(double* p, mask m, reg r) { _mm512_mask_storeu_pd(p, m, r); }
  static reg set1(double x) { return _mm512_set1_pd(x); }
  static reg zero() { return _mm512_setzero_pd(); }
  static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_pd(a, b, c); }
  static mask tail_mask(int n) { return static_cast<mask>((1u << n) - 1u); }
};

// R x (NV*VL) register tile; the last vector may be masked. Accumulation over
// k runs ascending with a single accumulator per element.
template <class T, int R, int NV>
void kern(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int k,
          bool accumulate, typename V<T>::mask tailm, bool masked) {
  using W = V<T>;
  constexpr int VL = W::VL;
  typename W::reg acc[R][NV];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < NV; ++v) {
      if (accumulate) {
        const T* cp = c + static_cast<size_t>(r) * ldc + v * VL;
        acc[r][v] = (masked && v == NV - 1) ? W::maskz_load(tailm, cp) : W::load(cp);
      } else {
        acc[r][v] = W::zero();
      }
    }
  for (int l = 0; l < k; ++l) {
    typename W::reg bv[NV];
    const T* bp = b + static_cast<size_t>(l) * ldb;
    for (int v = 0; v < NV; ++v)
      bv[v] = (masked && v == NV - 1) ? W::maskz_load(tailm, bp + v * VL)
                                      : W::load(bp + v * VL);
    for (int r = 0; r < R; ++r) {
      typename W::reg ar = W::set1(a[static_cast<size_t>(r) * lda + l]);
      for (int v = 0; v < NV; ++v) acc[r][v] = W::fma(ar, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < NV; ++v) {
      T* cp = c + static_cast<size_t>(r) * ldc + v * VL;
      if (masked && v == NV - 1)
        W::mask_store(cp, tailm, acc[r][v]);
      else
        W::store(cp, acc[r][v]);
    }
}

template <class T, int R>
void kern_rows(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int nv,
               int k, bool accumulate, typename V<T>::mask tailm, bool masked) {
  switch (nv) {
    case 1: kern<T, R, 1>(a, lda, b, ldb, c, ldc, k, accumulate, tailm, masked); break;
    case 2: kern<T, R, 2>(a, lda, b, ldb, c, ldc, k, accumulate, tailm, masked); break;
    case 3: kern<T, R, 3>(a, lda, b, ldb, c, ldc, k, accumulate, tailm, masked); break;
    default: kern<T, R, 4>(a, lda, b, ldb, c, ldc, k, accumulate, tailm, masked); break;
  }
}

template <class T>
void gemm_impl(const T* a, int lda, const T* b, int ldb, T* c, int ldc, int m,
               int n, int k, bool accumulate) {
  using W = V<T>;
  constexpr int VL = W::VL;
  for (int j = 0; j < n;) {
    int rem = n - j;
    int nv = std::min(4, (rem + VL - 1) / VL);
    int width = std::min(nv * VL, rem);
    bool masked = width != nv * VL;
    typename W::mask tailm =
        masked ? W::tail_mask(width - (nv - 1) * VL) : W::tail_mask(VL == 16 ? 16 : 8);
    const T* bj = b + j;
    int i = 0;
    for (; i + 4 <= m; i += 4)
      kern_rows<T, 4>(a + static_cast<size_t>(i) * lda, lda, bj, ldb,
                      c + static_cast<size_t>(i) * ldc + j, ldc, nv, k,
                      accumulate, tailm, masked);
    for (; i + 2 <= m; i += 2)
      kern_rows<T, 2>(a + static_cast<size_t>(i) * lda, lda, bj, ldb,
                      c + static_cast<size_t>(i) * ldc + j, ldc, nv, k,
                      accumulate, tailm, masked);
    for (; i < m; ++i)
      kern_rows<T, 1>(a + static_cast<size_t>(i) * lda, lda, bj, ldb,
                      c + static_cast<size_t>(i) * ldc + j, ldc, nv, k,
                      accumulate, tailm, masked);
    j += width;
  }
}

}  // namespace

void gemm_avx512_f32(const float* a, int lda, const float* b, int ldb, float* c,
                     int ldc, int m, int n, int k, bool accumulate) {
  gemm_impl<float>(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
}

void gemm_avx512_f64(const double* a, int lda, const double* b, int ldb,
                     double* c, int ldc, int m, int n, int k, bool accumulate) {
  gemm_impl<double>(a, lda, b, ldb, c, ldc, m, n, k, accumulate);
}

}  // namespace prolif::detail

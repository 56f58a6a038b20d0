// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "prolif/matrix.hpp"

namespace prolif {

enum class Act { Sine, Softplus, Sigmoid, Identity };
enum class Unary { Square, SmoothL1 };

namespace detail {

// Strict scalar exp, compiled in its own translation unit without vector-math
// flags. The compositor uses it so its arithmetic matches a plain scalar
// transliteration bit for bit.
float exp_strict(float x);
double exp_strict(double x);

template <class T>
inline T sigmoid_stable(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T softplus_stable(T x) {
  // log(1 + exp(x)) = max(x, 0) + log1p(exp(-|x|))
  const T m = x > T(0) ? x : T(0);
  return m + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

template <class T>
void act_eval(Act kind, T omega, const DenseMatrix<T>& x, DenseMatrix<T>& y) {
  if (!y.same_shape(x)) y = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = y.data();
  const size_t n = x.size();
  switch (kind) {
    case Act::Sine:
      for (size_t i = 0; i < n; ++i) q[i] = std::sin(omega * p[i]);
      break;
    case Act::Softplus:
      for (size_t i = 0; i < n; ++i) q[i] = detail::softplus_stable(p[i]);
      break;
    case Act::Sigmoid:
      for (size_t i = 0; i < n; ++i) q[i] = detail::sigmoid_stable(p[i]);
      break;
    case Act::Identity:
      for (size_t i = 0; i < n; ++i) q[i] = p[i];
      break;
  }
}

// First derivative of the activation, evaluated at the pre-activation.
template <class T>
void act_deriv1(Act kind, T omega, const DenseMatrix<T>& x, DenseMatrix<T>& d) {
  if (!d.same_shape(x)) d = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = d.data();
  const size_t n = x.size();
  switch (kind) {
    case Act::Sine:
      for (size_t i = 0; i < n; ++i) q[i] = omega * std::cos(omega * p[i]);
      break;
    case Act::Softplus:
      for (size_t i = 0; i < n; ++i) q[i] = detail::sigmoid_stable(p[i]);
      break;
    case Act::Sigmoid:
      for (size_t i = 0; i < n; ++i) {
        const T s = detail::sigmoid_stable(p[i]);
        q[i] = s * (T(1) - s);
      }
      break;
    case Act::Identity:
      for (size_t i = 0; i < n; ++i) q[i] = T(1);
      break;
  }
}

// Second derivative, needed when adjoints flow into tangent channels.
template <class T>
void act_deriv2(Act kind, T omega, const DenseMatrix<T>& x, DenseMatrix<T>& d) {
  if (!d.same_shape(x)) d = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = d.data();
  const size_t n = x.size();
  switch (kind) {
    case Act::Sine:
      for (size_t i = 0; i < n; ++i)
        q[i] = -omega * omega * std::sin(omega * p[i]);
      break;
    case Act::Softplus:
      for (size_t i = 0; i < n; ++i) {
        const T s = detail::sigmoid_stable(p[i]);
        q[i] = s * (T(1) - s);
      }
      break;
    case Act::Sigmoid:
      for (size_t i = 0; i < n; ++i) {
        const T s = detail::sigmoid_stable(p[i]);
        q[i] = s * (T(1) - s) * (T(1) - T(2) * s);
      }
      break;
    case Act::Identity:
      d.set_zero();
      break;
  }
}

template <class T>
void unary_eval(Unary kind, T param, const DenseMatrix<T>& x, DenseMatrix<T>& y) {
  if (!y.same_shape(x)) y = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = y.data();
  const size_t n = x.size();
  switch (kind) {
    case Unary::Square:
      for (size_t i = 0; i < n; ++i) q[i] = p[i] * p[i];
      break;
    case Unary::SmoothL1:
      for (size_t i = 0; i < n; ++i) {
        const T a = std::abs(p[i]);
        q[i] = a < param ? T(0.5) * p[i] * p[i] / param : a - T(0.5) * param;
      }
      break;
  }
}

template <class T>
void unary_deriv1(Unary kind, T param, const DenseMatrix<T>& x, DenseMatrix<T>& d) {
  if (!d.same_shape(x)) d = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = d.data();
  const size_t n = x.size();
  switch (kind) {
    case Unary::Square:
      for (size_t i = 0; i < n; ++i) q[i] = T(2) * p[i];
      break;
    case Unary::SmoothL1:
      for (size_t i = 0; i < n; ++i) {
        const T v = p[i];
        q[i] = std::abs(v) < param ? v / param : (v > T(0) ? T(1) : T(-1));
      }
      break;
  }
}

template <class T>
void unary_deriv2(Unary kind, T param, const DenseMatrix<T>& x, DenseMatrix<T>& d) {
  if (!d.same_shape(x)) d = DenseMatrix<T>(x.rows(), x.cols());
  const T* p = x.data();
  T* q = d.data();
  const size_t n = x.size();
  switch (kind) {
    case Unary::Square:
      d.fill(T(2));
      break;
    case Unary::SmoothL1:
      for (size_t i = 0; i < n; ++i)
        q[i] = std::abs(p[i]) < param ? T(1) / param : T(0);
      break;
  }
}

// out (+)= a .* b
template <class T>
void mul_ew(const DenseMatrix<T>& a, const DenseMatrix<T>& b, DenseMatrix<T>& out,
            bool accumulate) {
  check_dim(a.same_shape(b), "mul_ew: shape mismatch");
  if (!out.same_shape(a)) {
    check_dim(!accumulate, "mul_ew: accumulate into wrong shape");
    out = DenseMatrix<T>(a.rows(), a.cols());
  }
  const T* p = a.data();
  const T* q = b.data();
  T* r = out.data();
  const size_t n = a.size();
  if (accumulate)
    for (size_t i = 0; i < n; ++i) r[i] += p[i] * q[i];
  else
    for (size_t i = 0; i < n; ++i) r[i] = p[i] * q[i];
}

// out (+)= a .* b .* c
template <class T>
void mul3_ew(const DenseMatrix<T>& a, const DenseMatrix<T>& b,
             const DenseMatrix<T>& c, DenseMatrix<T>& out, bool accumulate) {
  check_dim(a.same_shape(b) && a.same_shape(c), "mul3_ew: shape mismatch");
  if (!out.same_shape(a)) {
    check_dim(!accumulate, "mul3_ew: accumulate into wrong shape");
    out = DenseMatrix<T>(a.rows(), a.cols());
  }
  const T* p = a.data();
  const T* q = b.data();
  const T* s = c.data();
  T* r = out.data();
  const size_t n = a.size();
  if (accumulate)
    for (size_t i = 0; i < n; ++i) r[i] += p[i] * q[i] * s[i];
  else
    for (size_t i = 0; i < n; ++i) r[i] = p[i] * q[i] * s[i];
}

}  // namespace prolif

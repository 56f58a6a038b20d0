// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "prolif/common.hpp"

namespace prolif {

// Central difference of a scalar function along one coordinate.
template <class T, class F>
double central_difference(F&& f, std::vector<T>& point, size_t coord, double eps) {
  const T saved = point[coord];
  point[coord] = static_cast<T>(static_cast<double>(saved) + eps);
  const double fp = static_cast<double>(f(std::span<const T>(point)));
  point[coord] = static_cast<T>(static_cast<double>(saved) - eps);
  const double fm = static_cast<double>(f(std::span<const T>(point)));
  point[coord] = saved;
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw ConfigError("central_difference: non-finite evaluation");
  return (fp - fm) / (2.0 * eps);
}

// Max over the listed coordinates of
//   |analytic - central| / max(|analytic|, |central|, floor),  floor = 1e-8.
template <class T, class F>
double finite_difference_check(F&& f, std::vector<T> point,
                               std::span<const double> analytic,
                               std::span<const size_t> coords, double eps) {
  constexpr double kFloor = 1e-8;
  double worst = 0.0;
  for (size_t c : coords) {
    const double fd = central_difference(f, point, c, eps);
    const double an = analytic[c];
    const double denom = std::max({std::abs(an), std::abs(fd), kFloor});
    worst = std::max(worst, std::abs(an - fd) / denom);
  }
  return worst;
}

template <class T, class F>
double finite_difference_check(F&& f, std::vector<T> point,
                               std::span<const double> analytic, double eps) {
  std::vector<size_t> coords(point.size());
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return finite_difference_check(std::forward<F>(f), std::move(point), analytic,
                                 std::span<const size_t>(coords), eps);
}

}  // namespace prolif

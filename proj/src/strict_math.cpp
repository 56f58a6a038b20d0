// SPDX-License-Identifier: Apache-2.0
//
// Out-of-line scalar libm wrappers. Loops that call these cannot be
// auto-vectorized through the call, so callers get the plain glibc results
// regardless of how their own translation unit is optimized.

#include <cmath>

namespace prolif::detail {

__attribute__((noinline)) float exp_strict(float x) { return std::exp(x); }
__attribute__((noinline)) double exp_strict(double x) { return std::exp(x); }

}  // namespace prolif::detail

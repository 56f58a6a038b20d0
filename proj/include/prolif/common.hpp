// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace prolif {

enum class Precision : uint8_t { F32 = 4, F64 = 8 };

inline const char* precision_name(Precision p) {
  return p == Precision::F32 ? "f32" : "f64";
}

// Shape/usage violations inside the numeric engine.
class DimensionError : public std::runtime_error {
public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate parameter states (e.g. zero-norm direction rows).
class DegenerateParamError : public std::runtime_error {
public:
  explicit DegenerateParamError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external files (checkpoints, NPY, images, manifests).
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss/gradients during training abort the run.
class TrainingAbort : public std::runtime_error {
public:
  explicit TrainingAbort(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_dim(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

// Worker cap from the environment; values < 1 and garbage fall back to 1.
inline int env_thread_cap() {
  const char* s = std::getenv("PROLIF_THREADS");
  if (!s) return 1;
  char* end = nullptr;
  long v = std::strtol(s, &end, 10);
  if (end == s || v < 1) return 1;
  if (v > 256) v = 256;
  return static_cast<int>(v);
}

}  // namespace prolif

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "prolif/common.hpp"

namespace prolif {

// Deterministic RNG wrapper. std::mt19937_64 supplies the bit stream; the
// value helpers below are written out explicitly instead of going through
// std::uniform_*_distribution, whose call sequences are not pinned by the
// standard. Streams are serializable so checkpoints can resume bitwise.
class Rng {
public:
  Rng() : gen_(0x9e3779b97f4a7c15ULL) {}
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Unbiased integer in [0, n) via Lemire's multiply-shift with rejection.
  uint64_t uniform_index(uint64_t n) {
    if (n == 0) throw ConfigError("uniform_index: n must be positive");
    unsigned __int128 m = static_cast<unsigned __int128>(gen_()) * n;
    uint64_t lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t lim = (0 - n) % n;
      while (lo < lim) {
        m = static_cast<unsigned __int128>(gen_()) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  // Derive an independent stream: stream i = splitmix64 chain over (state, i).
  Rng split(uint64_t index) const {
    uint64_t x = mix(mix(0x2545f4914f6cdd1dULL ^ index) + serial_hash());
    return Rng(x);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  static Rng deserialize(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    is >> r.gen_;
    if (!is) throw FormatError("Rng: malformed serialized state");
    return r;
  }

  bool operator==(const Rng& o) const { return gen_ == o.gen_; }

private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  uint64_t serial_hash() const {
    // Cheap digest of the serialized engine state.
    std::string s = serialize();
    uint64_t h = 1469598103934665603ULL;
    for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    return h;
  }

  std::mt19937_64 gen_;
};

}  // namespace prolif

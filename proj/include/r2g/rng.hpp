// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace r2g {

/// Counter-based generator: draw n of stream s is a pure function of
/// (seed, s, n). Owned by whoever needs randomness; there is no global one.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ ^ mix(++counter_ * 0x9E3779B97F4A7C15ULL)); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double normal();

  /// Independent child stream; does not advance this generator.
  CounterRng fork(std::uint64_t stream) const {
    return CounterRng(mix(seed_ + 0xD1B54A32D192ED03ULL * (stream + 1)));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace r2g

#pragma once

#include <cstdint>
#include <random>

namespace aan {

// Seeded generator used everywhere randomness is needed (init, data,
// dropout). Conversions are done from raw 64-bit draws instead of
// std::*_distribution so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Child stream seeded from this one; successive forks are independent.
  Rng fork() { return Rng(mix(next_u64())); }

  // Stream for (seed, purpose) pairs, e.g. init/data/dropout of one run.
  static Rng derive(std::uint64_t seed, std::uint64_t tag) {
    return Rng(mix(seed + 0x9E3779B97F4A7C15ull * (tag + 1)));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  std::mt19937_64 engine_;
};

}  // namespace aan

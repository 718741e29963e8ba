#pragma once
// Self-contained deterministic RNG so that results do not depend on the
// standard library's distribution implementations. One global seed is
// expanded into per-component streams through sub_seed's fixed counter
// scheme; every consumer documents its counter.

#include <cmath>
#include <cstdint>

#include "robnet/linalg.hpp"

namespace robnet {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline uint64_t sub_seed(uint64_t seed, uint64_t counter) {
  uint64_t s = seed ^ (0xA0761D6478BD642Full + 0x9E3779B97F4A7C15ull * (counter + 1));
  return splitmix64(s);
}

// Fixed counter scheme for expanding an experiment seed into per-component
// streams.
enum : uint64_t { kSeedRenInit = 1, kSeedLbdnInit = 2, kSeedData = 3, kSeedNoise = 4, kSeedProbe = 5 };

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Warm the state so that small seeds do not produce correlated streams.
    splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Standard normal via Box-Muller (one spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double stddev) { return stddev * normal(); }

  // Uniform integer in [0, n) without modulo bias.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  Mat normal_mat(int r, int c, double stddev) {
    Mat m(r, c);
    for (auto& v : m.a) v = normal(stddev);
    return m;
  }

  Mat uniform_mat(int r, int c, double a, double b) {
    Mat m(r, c);
    for (auto& v : m.a) v = uniform(a, b);
    return m;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace robnet

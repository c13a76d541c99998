#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "handmim/error.hpp"

namespace handmim {

// Deterministic random source. All sampling goes through this wrapper rather
// than std:: distributions, because the standard leaves distribution
// algorithms implementation-defined; the raw mt19937_64 stream plus our own
// transforms gives bit-identical behavior across standard libraries.
//
// The full generator state round-trips through a string, so checkpoints can
// resume the exact stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    HM_CHECK(lo <= hi, InvariantError, "uniform: lo > hi");
    return lo + (hi - lo) * uniform01();
  }

  // Uniform integer in [0, n). Rejection-sampled, exactly uniform.
  std::uint64_t uniform_int(std::uint64_t n) {
    HM_CHECK(n > 0, InvariantError, "uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, cosine branch only; stateless beyond the engine.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal clipped to [-2s, 2s] by resampling; used for weight init.
  double trunc_normal(double stddev) {
    for (int i = 0; i < 64; ++i) {
      double z = normal();
      if (std::abs(z) <= 2.0) return z * stddev;
    }
    return 0.0;
  }

  // Fisher-Yates on [0, n); returns the full permutation.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(uniform_int(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  std::string serialize() const {
    std::ostringstream ss;
    ss << engine_;
    return ss.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream ss(s);
    ss >> engine_;
    HM_CHECK(!ss.fail(), IoError, "malformed rng state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace handmim

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "geocue/common.hpp"

namespace geocue {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic per-purpose seed from a master seed and up to three tags.
inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  return mix64(mix64(mix64(mix64(master) ^ a) ^ b) ^ c);
}

/// mt19937_64 with hand-rolled distributions. The standard engine is fully
/// specified, the standard distributions are not; drawing through these
/// helpers keeps streams bit-identical across platforms and compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1), 53 random bits.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  /// Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = u01();
    while (u1 <= 1e-300) u1 = u01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = kTwoPi * u01();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  /// Poisson draw; Knuth's product method for small means, normal
  /// approximation above (scatter counts only, exactness not required there).
  long long poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 500.0) {
      const long long n = std::llround(gaussian(mean, std::sqrt(mean)));
      return n < 0 ? 0 : n;
    }
    const double limit = std::exp(-mean);
    long long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= u01();
    } while (p > limit);
    return k - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// m distinct values from {0, ..., n-1} via partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int m) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    if (m > n) m = n;
    for (int i = 0; i < m; ++i) {
      const int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(m));
    return pool;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace geocue

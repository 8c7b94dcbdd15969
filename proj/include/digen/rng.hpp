#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "digen/error.hpp"

namespace digen {

// splitmix64 finalizer. Used for seed derivation and hashing so that results
// do not depend on library-version details of std:: distributions.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2)));
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Deterministic stream id for (seed, scope, index). Regenerating any single
// item only needs its coordinates, never the draws that preceded it.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view scope,
                                 std::uint64_t index) {
  std::uint64_t h = mix64(seed);
  h = hash_combine(h, fnv1a(scope));
  h = hash_combine(h, index);
  return h;
}

// mt19937_64 engine with hand-rolled distributions. The standard pins the
// engine's output exactly; std::uniform_* distributions are implementation
// defined, so we do not use them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed ^ 0xD1B54A32D192ED03ull)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in {0, ..., n-1} via rejection; unbiased.
  int uniform_int(int n) {
    if (n <= 0) throw InvalidParam("uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // Inclusive range [lo, hi].
  int uniform_range(int lo, int hi) {
    if (lo > hi) throw InvalidParam("uniform_range: lo > hi");
    return lo + uniform_int(hi - lo + 1);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller with cached spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Draw an index from an unnormalized nonnegative weight vector.
  int categorical(const std::vector<double>& w) {
    double total = 0.0;
    for (double v : w) {
      if (v < 0.0 || !std::isfinite(v)) throw InvalidParam("categorical: bad weight");
      total += v;
    }
    if (total <= 0.0) throw ZeroSupport("categorical: all weights zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(w.size()) - 1;  // guard against fp rounding
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace digen

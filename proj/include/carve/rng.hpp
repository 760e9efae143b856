#pragma once

// Deterministic randomness.
//
// std::mt19937_64 produces an implementation-independent stream, but the
// standard *distributions* do not, so every draw here goes through our own
// arithmetic. Seeds for subsystems are derived from one root seed plus a
// short purpose tag, which keeps independent consumers off each other's
// streams without threading generator state through every call.

#include "carve/common.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace carve {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t tag64(const char* s) {
  // FNV-1a over the tag string.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
  return h;
}

// Derives a child seed from a root seed, a purpose tag and up to three
// stream coordinates (experience, step, position, ...).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(root ^ tag);
  h = splitmix64(h ^ (a + 0x9e3779b97f4a7c15ull));
  h = splitmix64(h ^ (b + 0x7f4a7c159e3779b9ull));
  h = splitmix64(h ^ (c + 0x2545f4914f6cdd1dull));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    check(n > 0, "rng: below(0) is undefined");
    const std::uint64_t min = (-n) % n;  // 2^64 mod n
    std::uint64_t x = eng_();
    while (x < min) x = eng_();
    return x % n;
  }

  // Standard normal via Box-Muller; caches the spare deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vector unit_vector(int dim) {
    check(dim > 0, "rng: unit_vector dimension must be positive");
    Vector v(dim);
    double norm = 0.0;
    while (norm < kTinyNorm) {
      for (int i = 0; i < dim; ++i) v[i] = normal();
      norm = v.norm();
    }
    return v / norm;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // k distinct values sampled uniformly from pool, via partial Fisher-Yates.
  template <typename T>
  std::vector<T> sample(std::vector<T> pool, std::size_t k) {
    check(k <= pool.size(), "rng: sample size ", k, " exceeds pool size ",
          pool.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(pool[i], pool[i + below(pool.size() - i)]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace carve

#pragma once

#include <cmath>
#include <cstdint>

namespace hnseg {

// splitmix64 generator: tiny state, identical output on every platform,
// cheap to derive per (seed, case, epoch, worker) without correlation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0
  std::int64_t uniform_int(std::int64_t n) {
    std::int64_t v = std::int64_t(uniform() * double(n));
    return v < n ? v : n - 1;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476 * uniform();
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Deterministic seed derivation, e.g. mix(global_seed, case_index).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    Rng r(a ^ (b * 0x9e3779b97f4a7c15ull + 0x85ebca6b0ull));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stateless per-key noise, usable from parallel loops (one key per voxel).
inline double hash_uniform(std::uint64_t key) {
  Rng r(key);
  return r.uniform();
}

inline double hash_normal(std::uint64_t key) {
  Rng r(key);
  double u1 = r.uniform();
  while (u1 <= 1e-300) u1 = r.uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476 * r.uniform());
}

// Approximately normal (Irwin-Hall, n=4), zero mean, unit variance; no
// transcendentals, cheap enough for per-voxel texture noise.
inline double hash_noise(std::uint64_t key) {
  Rng r(key);
  return (r.uniform() + r.uniform() + r.uniform() + r.uniform() - 2.0) *
         1.7320508075688772;
}

}  // namespace hnseg

#pragma once

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <random>
#include <vector>

#include "wflow/tensor.hpp"

namespace wflow {

/// Seeded random stream. Child streams derived from (seed, key) are
/// independent of how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }
  Rng derive(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + 0x9e3779b97f4a7c15ULL))); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Tensor normal_tensor(std::size_t rows, std::size_t cols);
  Tensor rademacher_tensor(std::size_t rows, std::size_t cols);
  /// Random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

inline Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = normal();
  return t;
}

inline Tensor Rng::rademacher_tensor(std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = rademacher();
  return t;
}

inline std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), engine_);
  return p;
}

}  // namespace wflow

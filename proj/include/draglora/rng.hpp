#pragma once

#include <cstdint>
#include <random>

#include "draglora/tensor.hpp"

namespace draglora {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Seeded stream. Sub-streams are derived by label so that adding draws to one
// consumer never shifts another consumer's sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  Rng fork(std::uint64_t label) const { return Rng(splitmix64(seed_ ^ splitmix64(label + 0x51ED270B27ull))); }

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  template <class T>
  Tensor<T> normal_tensor(const std::vector<int>& shape, double stddev = 1.0) {
    Tensor<T> t(shape);
    for (auto& v : t.data) v = static_cast<T>(stddev * normal());
    return t;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace draglora

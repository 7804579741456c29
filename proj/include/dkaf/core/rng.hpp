#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dkaf {

// Seeded generator with distributions defined here rather than by the standard
// library, so draws are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[index(v.size())];
  }

 private:
  std::mt19937_64 gen_;
};

// Named sub-seed of a root seed; stable across platforms.
std::uint64_t derive_seed(std::uint64_t root, const std::string& name);

std::string sha256_hex(const std::string& data);

}  // namespace dkaf

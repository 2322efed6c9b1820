#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace qempo {

// Seeded generator with platform-independent draws: std::mt19937_64 output is
// fully specified, the std distributions are not, so draws are built by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    const auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Index drawn from a probability vector by inverse CDF.
  template <typename Range>
  std::size_t categorical(const Range& probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    std::size_t i = 0;
    for (double p : probs) {
      if (p > 0.0) last_positive = i;
      acc += p;
      if (u < acc) return i;
      ++i;
    }
    return last_positive;
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace qempo

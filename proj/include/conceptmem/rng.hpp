#pragma once

#include <cstdint>
#include <span>

namespace cmem {

/// xoshiro256** seeded through splitmix64. Distributions are implemented here
/// rather than through <random> so that streams are identical across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Independent stream derived from this generator's seed and a tag, without
  /// advancing this generator.
  Rng fork(std::uint64_t tag) const;

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);
/// Stateless mix of two words, used to derive per-episode seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace cmem

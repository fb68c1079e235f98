#pragma once

#include <cstdint>
#include <vector>

#include "colproj/matrix.hpp"

namespace colproj {

/// SplitMix64 step; used to expand a user seed into generator state.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xoshiro256** 1.0. The 256-bit state is filled with four successive
/// SplitMix64 outputs of the seed, so a given seed yields the same stream on
/// every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Marsaglia polar method.
  double normal();

  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);
  Matrix normal_matrix(std::size_t rows, std::size_t cols, double sd = 1.0);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace colproj

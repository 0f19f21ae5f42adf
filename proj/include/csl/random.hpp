// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random streams. A stream is identified by a key derived from
// (seed, ids...) and its n-th output is a pure function of (key, n), so trials
// run on any thread in any order reproduce bit-for-bit.

#pragma once

#include "csl/core.hpp"

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace csl {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Combine a seed with a path of integer ids into a stream key.
inline constexpr std::uint64_t derive_key(std::uint64_t seed,
                                          std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t key = mix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (auto id : ids) key = mix64(key ^ mix64(id + 0x9E3779B97F4A7C15ULL));
  return key;
}

/// SplitMix64 in counter form with Box-Muller normals.
class Rng {
 public:
  explicit Rng(std::uint64_t key) noexcept : key_(key) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept
      : key_(derive_key(seed, ids)) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  Vector normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace csl

#pragma once

#include <cstdint>
#include <string_view>

namespace oodscore {

/// SplitMix64 (Steele, Lea & Flood 2014; Vigna's reference `splitmix64.c`).
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// Uniforms take the top 53 bits; normals use Box-Muller with the sine half
/// cached for the next call. Independent streams are derived from a base
/// seed and a tag via `derive_seed`, so every tensor gets its own stream.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  /// Stream keyed by (seed, tag).
  static SplitMix64 stream(std::uint64_t seed, std::string_view tag) noexcept;

  std::uint64_t next() noexcept;
  /// Uniform on [0, 1).
  double uniform() noexcept;
  /// Standard normal.
  double normal() noexcept;

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// FNV-1a 64-bit hash.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// One SplitMix64 output step applied to seed ^ fnv1a64(tag).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;

}  // namespace oodscore

#pragma once

#include <cstdint>
#include <random>

namespace s2c {

using Rng = std::mt19937_64;

// Independent named streams derived from one seed, so adding a consumer never
// shifts the draws of another.
enum class Stream : std::uint32_t {
  scene_mask = 1,
  scene_imagery,
  tdc_offset,
  sm_anchor,
  sm_jitter,
  gps_noise,
  point_count,
  weight_init,
  shuffle,
  grad_check,
  test_data,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(sub),
                    static_cast<std::uint32_t>(sub >> 32)};
  return Rng(seq);
}

/// splitmix64 finalizer over (seed, index); used for per-tile and per-cell seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace s2c

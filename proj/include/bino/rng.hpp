#pragma once

#include <cstdint>
#include <random>

namespace bino {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from (seed, tag, index).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return Rng(mix_seed(mix_seed(seed ^ mix_seed(tag)) + index));
}

inline double uniform(Rng& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

inline bool coin(Rng& rng) { return std::bernoulli_distribution(0.5)(rng); }

}  // namespace bino

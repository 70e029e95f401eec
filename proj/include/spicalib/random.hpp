#pragma once

#include <cstdint>
#include <random>

namespace spicalib {

// SplitMix64 step; used both as a seed scrambler and as a counter-based
// generator so per-pixel noise is independent of evaluation order.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2)));
}

// Top 53 bits -> double in [0, 1). Implementation-independent, unlike
// std::uniform_real_distribution.
inline double unit_double(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Deterministic stream for scene sampling; mt19937_64 output is fixed by the
// standard, the [0,1) mapping above keeps draws portable.
class Sampler {
 public:
  explicit Sampler(uint64_t seed) : rng_(seed) {}

  double unit() { return unit_double(rng_()); }

  double uniform(double lo, double hi) { return lo + unit() * (hi - lo); }

  uint64_t bits() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

// Counter-based uniform noise in [0, lambda); identical for a given
// (seed, frame, pixel) triple no matter how pixels are scheduled.
inline double pixel_noise(uint64_t seed, uint64_t frame, uint64_t pixel, double lambda) {
  return lambda * unit_double(splitmix64(hash_mix(seed, frame * 0x100000001b3ull + pixel)));
}

}  // namespace spicalib

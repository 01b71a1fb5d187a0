// Shared numeric helpers: deterministic RNG streams and float quantization.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bbt {

// splitmix64, used to derive independent seed streams from one base seed.
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream));
}

using Rng = std::mt19937_64;

// Uniform in (0,1], 53-bit resolution.
inline double uniform01(Rng& g) {
  return static_cast<double>((g() >> 11) + 1) * 0x1.0p-53;
}

// Box-Muller without cached spare, so replay is independent of call grouping.
inline double gaussian(Rng& g) {
  const double u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double uniform_in(Rng& g, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(g() >> 11) * 0x1.0p-53);
}

struct DegenerateStatsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bbt

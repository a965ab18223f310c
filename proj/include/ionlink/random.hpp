#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ionlink {

// The engine's output sequence is fixed by the standard; the transforms below
// are written out so that sampled values do not depend on the standard
// library's distribution implementations.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

/// Independent seed for sub-run `stream` of a run seeded with `seed`
/// (splitmix64 finaliser), so parallel work items get fixed streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Uniform double in the open interval (0, 1).
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Exponential draw by inversion; always strictly positive.
inline double exponential(Rng& rng, double mean) {
  return -mean * std::log(uniform_open01(rng));
}

/// Index drawn from a discrete distribution given by (not necessarily
/// normalised) non-negative weights.
template <typename Range>
std::size_t discrete(Rng& rng, const Range& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  std::size_t i = 0;
  std::size_t last = 0;
  for (double w : weights) {
    if (w > 0.0) {
      last = i;
      if (u < w) return i;
      u -= w;
    }
    ++i;
  }
  return last;
}

}  // namespace ionlink

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace iars {

// splitmix64: used to derive independent stream seeds from (seed, index)
// pairs so that per-sample RNG does not depend on iteration order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(seed, stream));
}

// Hand-rolled draws instead of std distributions: the standard leaves their
// algorithms implementation-defined, and init/augmentation streams must be
// bit-identical across toolchains.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller; discards the second variate to stay stateless.
inline double unit_normal(std::mt19937_64& rng) {
  double u = unit_uniform(rng);
  while (u <= 0.0) u = unit_uniform(rng);
  const double v = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586477 * v);
}

}  // namespace iars

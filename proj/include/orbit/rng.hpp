#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace orbit {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed for a named subsystem from the root seed.
inline std::uint64_t split_seed(std::uint64_t root, std::string_view subsystem, std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ fnv1a64(subsystem)) + index);
}

inline Rng make_rng(std::uint64_t root, std::string_view subsystem, std::uint64_t index = 0) {
  return Rng(split_seed(root, subsystem, index));
}

// 53-bit uniform in [0,1); identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) {
  return uniform01(rng) < p;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

}  // namespace orbit

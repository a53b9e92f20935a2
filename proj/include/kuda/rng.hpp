// Seed derivation. Every random stream in a session comes from one u64 seed:
//   derive_seed(root, "component") = splitmix64(root ^ fnv1a64("component"))
// so adding a new consumer never perturbs an existing one.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>

namespace kuda {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  return splitmix64(root ^ fnv1a64(component));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view component) { return Rng(derive_seed(root, component)); }

/// Uniform double in [lo, hi) from the raw engine output. std::uniform_real_distribution
/// is implementation-defined; this keeps generated data stable across standard libraries.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Standard normal via Box-Muller on uniform().
inline double normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925;
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))) % n;
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(rng, i)]);
}

}  // namespace kuda

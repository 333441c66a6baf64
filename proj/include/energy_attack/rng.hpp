#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ea {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed for a named pipeline stage, so that e.g.
/// the attack stage can be rerun without replaying training draws.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return splitmix64(seed ^ splitmix64(h));
}

inline Rng make_rng(std::uint64_t seed, std::string_view stage) { return Rng(stage_seed(seed, stage)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double random_sign(Rng& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

}  // namespace ea

#pragma once

// Reproducible random streams. Every independent unit of work (replicate,
// imputation draw) gets its own engine seeded from a hash of the master
// seed and its integer coordinates, so results do not depend on which thread
// executes the unit or in what order.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ace {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> coords) noexcept {
  std::uint64_t h = splitmix64(master);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::initializer_list<std::uint64_t> coords) {
  const std::uint64_t s = derive_seed(master, coords);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

// Stream tags keep different consumers of the same master seed apart.
enum class StreamTag : std::uint64_t { Replicate = 1, Imputation = 2 };

}  // namespace ace

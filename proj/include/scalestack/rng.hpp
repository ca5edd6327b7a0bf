#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace scalestack {

// Every stochastic step (init, dropout, crops, shuffles, synthesis) draws from
// an explicitly threaded engine so runs are reproducible from a seed.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Derives an independent stream for a named sub-task from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace scalestack

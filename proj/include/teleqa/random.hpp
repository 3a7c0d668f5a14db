#pragma once

// Portable draws on top of std::mt19937_64: the standard distributions are
// implementation-defined, these produce identical sequences everywhere.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace teleqa {

inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t draw;
  do draw = rng();
  while (draw >= limit);
  return draw % bound;
}

template <class T>
void portable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_below(rng, i))]);
}

template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  portable_shuffle(v, rng);
}

}  // namespace teleqa

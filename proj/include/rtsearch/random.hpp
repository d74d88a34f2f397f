#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace rtsearch {

/// Random stream owned by one attack run.
using Rng = std::mt19937_64;

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) noexcept {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent sub-stream, e.g. hash(run seed, record id).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
  return splitmix64(fnv1a64(label, splitmix64(seed)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

/// Uniform draw from [0, n) by rejection on the raw 64-bit output. The mapping
/// from generator output to index is fixed here rather than left to the
/// standard library, so traces replay identically across toolchains.
template <class Gen>
  requires std::uniform_random_bit_generator<Gen>
std::size_t uniform_index(Gen& gen, std::size_t n) {
  static_assert(Gen::min() == 0 && Gen::max() == std::numeric_limits<std::uint64_t>::max(),
                "uniform_index expects a full-range 64-bit generator");
  const auto bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              (std::numeric_limits<std::uint64_t>::max() % bound + 1) % bound;
  std::uint64_t x = gen();
  while (x > limit) x = gen();
  return static_cast<std::size_t>(x % bound);
}

}  // namespace rtsearch

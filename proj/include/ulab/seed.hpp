#pragma once

#include <bit>
#include <cstdint>
#include <string_view>

namespace ulab {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t hash_part(std::uint64_t v) { return v; }
inline std::uint64_t hash_part(int v) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(v)); }
inline std::uint64_t hash_part(double v) { return std::bit_cast<std::uint64_t>(v); }
inline std::uint64_t hash_part(std::string_view s) { return fnv1a64(s); }
inline std::uint64_t hash_part(const char* s) { return fnv1a64(s); }

/// Order-sensitive 64-bit combination of heterogeneous parts. Used to derive
/// independent RNG streams, e.g. hash64(global_seed, dataset, fraction, method).
template <typename... Parts>
std::uint64_t hash64(std::uint64_t seed, const Parts&... parts) {
  std::uint64_t h = mix64(seed);
  ((h = mix64(h ^ hash_part(parts))), ...);
  return h;
}

}  // namespace ulab

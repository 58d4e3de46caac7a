#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace d3 {

/// The random stream used by every randomized operator.
using Rng = std::mt19937_64;

/// 64-bit FNV-1a; stable across platforms, used for stream keys and config hashes.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a master seed with a textual key ("sample-17/epoch-2/aug").
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view key) {
  return splitmix64(master ^ splitmix64(fnv1a(key)));
}

inline Rng derive_stream(std::uint64_t master, std::string_view key) {
  return Rng(derive_seed(master, key));
}

}  // namespace d3

#pragma once

#include <cstdint>
#include <random>

namespace latentfilter {

using Rng = std::mt19937_64;

// splitmix64 finalizer (Vigna). Used to derive independent, reproducible
// seed streams from a master seed and integer stream indices.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hash (master, a, b) into one 64-bit seed by chaining the finalizer.
// Distinct (a, b) pairs give decorrelated streams regardless of the order
// in which they are consumed, which is what makes parallel trial execution
// reproducible.
constexpr std::uint64_t seed_stream(std::uint64_t master, std::uint64_t a,
                                    std::uint64_t b = 0) noexcept {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ splitmix64(a + 0x9e3779b97f4a7c15ULL));
  s = splitmix64(s ^ splitmix64(b + 0x7f4a7c159e3779b9ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(seed_stream(master, a, b));
}

}  // namespace latentfilter

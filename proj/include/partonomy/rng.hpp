#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace partonomy {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t hash = kFnvOffsetBasis) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= kFnvPrime;
  }
  return hash;
}

// splitmix64 finalizer; spreads low-entropy keys over all 64 bits.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for an independent stream keyed by (global seed, string key, small tag).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t tag = 0) noexcept;

// Deterministic RNG. The engine is fully specified by the standard; the
// distributions below are hand-written because std distributions are not
// required to produce the same sequence across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  // Uniform real in [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal via Box-Muller.
  double normal();

  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items[uniform_index(items.size())];
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace partonomy

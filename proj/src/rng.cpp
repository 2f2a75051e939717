#include "partonomy/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "partonomy/errors.hpp"

namespace partonomy {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::parse: return "parse";
    case ErrorKind::generation: return "generation";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::invalid: return "invalid";
  }
  return "unknown";
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t tag) noexcept {
  std::uint64_t h = mix64(seed);
  h = fnv1a64(key, h ^ kFnvOffsetBasis);
  return mix64(h ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) {
    throw Error(ErrorKind::invalid, "uniform_index: empty range");
  }
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) {
    x = engine_();
  }
  return static_cast<std::size_t>(x % bound);
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) {
    u1 = uniform01();
  }
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace partonomy

#include "sdpoint/rng.hpp"

#include <cmath>
#include <numbers>

#include "sdpoint/error.hpp"

namespace sdpoint {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGolden);
}

std::size_t Rng::uniform_choice(std::size_t k) {
  if (k == 0) throw UsageError("uniform_choice needs at least one outcome");
  if (k == 1) {
    next_u64();
    return 0;
  }
  const std::uint64_t bound = static_cast<std::uint64_t>(k);
  // Reject the low partial bucket so every residue is equally likely.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t v = next_u64();
    if (v >= threshold) return static_cast<std::size_t>(v % bound);
  }
}

double Rng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform01();
  double u2 = uniform01();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::derive(std::uint64_t tag) const { return Rng(mix64(seed_ ^ mix64(tag + kGolden))); }

}  // namespace sdpoint

#pragma once

#include <cstddef>
#include <cstdint>

namespace sdpoint {

// Counter-based generator: draw i is a stateless mix of (seed, i), so a
// stream is fully described by its seed and how many draws it has served.
// There is no global instance; each run owns its streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();

  // Unbiased index in [0, k). Throws UsageError when k == 0.
  std::size_t uniform_choice(std::size_t k);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal via Box-Muller; consumes two draws.
  double normal();

  // Independent stream keyed by (seed, tag); does not advance this stream.
  Rng derive(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace sdpoint

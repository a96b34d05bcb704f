#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "causalmm/tensor.hpp"

namespace causalmm {

// xoshiro256** seeded through splitmix64. The full algorithm is fixed so
// streams are reproducible across runs, compilers and platforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  // Independent substream keyed by a seed and an ordered list of tags.
  static SeededRng derived(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  // Standard normal by Box-Muller; consumes two uniforms per call.
  double normal();

  // Uniform integer in [0, n); n must be positive.
  std::size_t index(std::size_t n);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

std::uint64_t splitmix64(std::uint64_t x);

// n uniforms in [0, 1), advancing rng.
Tensor seeded_uniform(SeededRng& rng, std::size_t n);

}  // namespace causalmm

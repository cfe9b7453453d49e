#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "diffi2i/tensor.hpp"

namespace diffi2i {

// Portable seeded random source.
//
// Engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Distributions are implemented here rather than with
// <random>'s distribution templates, whose algorithms are left to the
// library vendor: uniform() takes the top 53 bits, normal() is Box-Muller
// without caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Fresh standard-normal tensor, no grad.
  Tensor normal_tensor(Shape shape);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer: derives independent stream seeds from (seed, k).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace diffi2i

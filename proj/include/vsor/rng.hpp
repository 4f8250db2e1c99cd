#pragma once

#include <cstdint>
#include <random>

#include "vsor/tensor.hpp"

namespace vsor {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from one base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(base ^ mix_seed(stream)) + index);
}

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace vsor

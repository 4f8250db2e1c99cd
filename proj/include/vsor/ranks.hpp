#pragma once

#include <span>
#include <string>
#include <vector>

#include "vsor/error.hpp"

namespace vsor {

/// True when `ranks` is a permutation of 1..N.
inline bool is_rank_permutation(std::span<const int> ranks) {
  std::vector<bool> seen(ranks.size() + 1, false);
  for (int r : ranks) {
    if (r < 1 || static_cast<std::size_t>(r) > ranks.size() || seen[static_cast<std::size_t>(r)]) return false;
    seen[static_cast<std::size_t>(r)] = true;
  }
  return true;
}

inline void require_rank_permutation(std::span<const int> ranks, const std::string& context) {
  if (!is_rank_permutation(ranks)) {
    throw ValidationError(ValidationKind::kNotPermutation,
                          context + ": ranks are not a permutation of 1.." + std::to_string(ranks.size()));
  }
}

/// Saliency level N − r + 1: larger means more salient.
inline double saliency_level(int rank, std::size_t count) {
  return static_cast<double>(count) - static_cast<double>(rank) + 1.0;
}

}  // namespace vsor

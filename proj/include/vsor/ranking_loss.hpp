#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vsor/autodiff.hpp"
#include "vsor/ranks.hpp"

namespace vsor {

inline constexpr double kDefaultRankMargin = 0.5;

/// Pairwise hinge: mean over pairs (i more salient than j) of
/// max(0, margin − (score_i − score_j)).
inline Var rank_loss(Var scores, std::span<const int> gt_ranks, double margin = kDefaultRankMargin) {
  const std::size_t n = scores.size();
  if (n < 2) throw DimensionError("rank_loss: need at least two objects, got " + std::to_string(n));
  if (gt_ranks.size() != n) {
    throw DimensionError("rank_loss: " + std::to_string(n) + " scores but " +
                         std::to_string(gt_ranks.size()) + " ranks");
  }
  if (!(margin > 0.0)) throw ValidationError(ValidationKind::kInvalidConfig, "rank_loss: margin must be positive");
  require_rank_permutation(gt_ranks, "rank_loss");

  const std::size_t pairs = n * (n - 1) / 2;
  Tensor diff_rows({pairs, n}, 0.0);
  std::size_t row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (gt_ranks[i] < gt_ranks[j]) {
        diff_rows.at({row, i}) = 1.0;
        diff_rows.at({row, j}) = -1.0;
        ++row;
      }
    }
  }
  Var d = scores.tape().constant(std::move(diff_rows));
  Var gaps = matmul(d, reshape(scores, {n, 1}));
  Var hinge = relu(affine(gaps, -1.0, margin));
  return affine(sum(hinge), 1.0 / static_cast<double>(pairs), 0.0);
}

/// Unweighted sum of the provided terms; the detector terms are normally absent.
inline Var total_loss(Var rank_term, std::optional<Var> box_term = std::nullopt,
                      std::optional<Var> mask_term = std::nullopt,
                      std::optional<Var> cls_term = std::nullopt) {
  Var total = rank_term;
  for (const auto& term : {box_term, mask_term, cls_term}) {
    if (term) total = add(total, *term);
  }
  return total;
}

inline double total_loss(double rank_term, std::optional<double> box_term = std::nullopt,
                         std::optional<double> mask_term = std::nullopt,
                         std::optional<double> cls_term = std::nullopt) {
  return box_term.value_or(0.0) + mask_term.value_or(0.0) + cls_term.value_or(0.0) + rank_term;
}

}  // namespace vsor

#pragma once

// Rank-map MAE and the segmentation-aware ranking correlation (SA-SOR).
//
// SA-SOR: GT and predicted instances are paired greedily by descending IoU
// (pairs below the threshold are never matched). Over the GT objects,
// x_i = N_gt − rank_i + 1 and y_i is the matched prediction's level
// N_pred − rank + 1, or 0 when the GT object has no match. The score is the
// Pearson correlation of x and y, undefined when N_gt < 2 or y is constant.
// Levels are integers, so the correlation is formed from exact integer sums.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "vsor/error.hpp"
#include "vsor/image.hpp"
#include "vsor/ranks.hpp"

namespace vsor {

struct InstanceMask {
  BinaryMask pixels;
  int identifier = 0;
};

struct RankedInstance {
  InstanceMask mask;
  int rank = 0;  // 1 = most salient
};

struct Matching {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt index, pred index)
  std::vector<std::size_t> unmatched_gt;
  std::vector<std::size_t> unmatched_pred;
};

inline constexpr double kDefaultIouThreshold = 0.5;

/// Mean absolute pixel difference between two rank maps of equal size.
inline double mae(const RankMap& predicted, const RankMap& truth) {
  if (!predicted.same_size(truth) || predicted.empty()) {
    throw DimensionError("mae: rank maps differ in size (" + std::to_string(predicted.width()) + "x" +
                         std::to_string(predicted.height()) + " vs " + std::to_string(truth.width()) +
                         "x" + std::to_string(truth.height()) + ")");
  }
  const double total = std::transform_reduce(
      predicted.pixels().begin(), predicted.pixels().end(), truth.pixels().begin(), 0.0, std::plus<>(),
      [](double p, double g) { return std::abs(p - g); });
  return total / static_cast<double>(predicted.size());
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_size(b)) throw DimensionError("iou: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0, pb = b[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// One-to-one greedy matching in descending IoU order (ties: lower GT index,
/// then lower prediction index). Only pairs with IoU ≥ threshold are eligible.
inline Matching match_instances(std::span<const InstanceMask> gt, std::span<const InstanceMask> pred,
                                double iou_threshold = kDefaultIouThreshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError(ValidationKind::kInvalidConfig, "match_instances: IoU threshold must be in (0,1]");
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const double v = iou(gt[g].pixels, pred[p].pixels);
      if (v >= iou_threshold) candidates.emplace_back(v, g, p);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);
  Matching m;
  for (const auto& [v, g, p] : candidates) {
    if (gt_used[g] || pred_used[p]) continue;
    gt_used[g] = pred_used[p] = true;
    m.pairs.emplace_back(g, p);
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!gt_used[g]) m.unmatched_gt.push_back(g);
  }
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!pred_used[p]) m.unmatched_pred.push_back(p);
  }
  return m;
}

/// Sample Pearson correlation; nullopt when either vector is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: vectors differ in length");
  if (x.size() < 2) throw DimensionError("pearson: need at least two samples");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v[0]; });
  };
  if (constant(x) || constant(y)) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson correlation of integer samples. Sums are accumulated exactly, so
/// the only rounding is in the final square root and division.
inline std::optional<double> pearson(std::span<const long long> x, std::span<const long long> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: vectors differ in length");
  if (x.size() < 2) throw DimensionError("pearson: need at least two samples");
  const long long n = static_cast<long long>(x.size());
  long long sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const long long vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
  if (vx == 0 || vy == 0) return std::nullopt;
  const double r = static_cast<double>(n * sxy - sx * sy) /
                   std::sqrt(static_cast<double>(vx) * static_cast<double>(vy));
  return std::clamp(r, -1.0, 1.0);
}

inline std::optional<double> sa_sor(std::span<const RankedInstance> gt, std::span<const RankedInstance> pred,
                                    double iou_threshold = kDefaultIouThreshold) {
  std::vector<int> gt_ranks;
  for (const auto& g : gt) gt_ranks.push_back(g.rank);
  require_rank_permutation(gt_ranks, "sa_sor ground truth");
  if (gt.size() < 2) return std::nullopt;

  std::vector<InstanceMask> gt_masks, pred_masks;
  for (const auto& g : gt) gt_masks.push_back(g.mask);
  for (const auto& p : pred) pred_masks.push_back(p.mask);
  const Matching m = match_instances(gt_masks, pred_masks, iou_threshold);

  std::vector<long long> x(gt.size()), y(gt.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) x[i] = static_cast<long long>(saliency_level(gt[i].rank, gt.size()));
  for (const auto& [g, p] : m.pairs) y[g] = static_cast<long long>(saliency_level(pred[p].rank, pred.size()));
  return pearson(x, y);
}

}  // namespace vsor

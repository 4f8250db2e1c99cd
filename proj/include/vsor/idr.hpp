#pragma once

// Inter-frame dynamic relation plus the refinement head.
//
// Each frame's value features are averaged over its objects and stacked into
// f_vᵀ (T×C×H×W). Three 1×1 projections give temporal key/query/value; a T×T
// scaled-softmax attention mixes the value stack into per-frame final
// features. Every object's relation map (C×HW) is multiplied with its frame's
// final map (HW×C), row-mean pooled to a C-vector, concatenated with an
// embedding of the downsampled initial mask and scored by a linear head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "vsor/autodiff.hpp"
#include "vsor/iar.hpp"
#include "vsor/image.hpp"

namespace vsor {

struct IdrParams {
  ConvParams k;
  ConvParams q;
  ConvParams v;
};

struct IdrVars {
  ConvVars k;
  ConvVars q;
  ConvVars v;
};

inline IdrVars bind(Tape& tape, const IdrParams& p, bool trainable) {
  return {bind(tape, p.k, trainable), bind(tape, p.q, trainable), bind(tape, p.v, trainable)};
}

inline IdrParams idr_param_init(std::size_t channels, std::uint64_t seed) {
  if (channels == 0) throw DimensionError("idr_param_init: channel count must be positive");
  Rng rng(seed);
  IdrParams p;
  p.k = init_conv(channels, channels, rng);
  p.q = init_conv(channels, channels, rng);
  p.v = init_conv(channels, channels, rng);
  return p;
}

struct RefinementParams {
  Tensor mask_weight;   // C×(H·W)
  Tensor mask_bias;     // C
  Tensor score_weight;  // 1×2C
  Tensor score_bias;    // 1
};

struct RefinementVars {
  Var mask_weight;
  Var mask_bias;
  Var score_weight;
  Var score_bias;
};

inline RefinementVars bind(Tape& tape, const RefinementParams& p, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  return {leaf(p.mask_weight), leaf(p.mask_bias), leaf(p.score_weight), leaf(p.score_bias)};
}

/// Mask embedding drawn Uniform(±1/√(H·W)); the score head starts at zero so an
/// untrained model ties every object.
inline RefinementParams refinement_param_init(std::size_t channels, std::size_t height,
                                              std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t hw = height * width;
  RefinementParams p;
  p.mask_weight = uniform_tensor({channels, hw}, 1.0 / std::sqrt(static_cast<double>(hw)), rng);
  p.mask_bias = Tensor({channels}, 0.0);
  p.score_weight = Tensor({1, 2 * channels}, 0.0);
  p.score_bias = Tensor({1}, 0.0);
  return p;
}

/// Inputs of one frame: f_r and f_v (both N_t×C×H×W) and one mask per object.
struct FrameObjects {
  Var relation;
  Var value;
  std::vector<BinaryMask> initial_masks;
};

struct RankedFrame {
  std::vector<double> scores;
  std::vector<int> ranks;  // 1 = most salient
  RankMap rank_map;
};

struct IdrFrameOutput {
  Var scores;  // differentiable, shape {N_t}
  RankedFrame ranked;
};

enum class TemporalMode {
  kAttention,  // full IDR
  kIdentity,   // IDR disabled: each frame keeps its own pooled value
};

struct TemporalAttention {
  Var stacked;    // f_vᵀ, T×C×H×W
  Var attention;  // T×T, absent in identity mode
  Var final;      // T×C×H×W
};

/// Rank 1 to the highest score; ties go to the lower object index.
inline std::vector<int> rank_assign(std::span<const double> scores) {
  if (scores.empty()) throw DimensionError("rank_assign: no scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("rank_assign: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> ranks(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r + 1);
  return ranks;
}

/// Paints (N−r+1)/N for each object, least salient first so the more salient
/// object owns overlapping pixels. Background stays 0.
inline RankMap render_rank_map(std::span<const BinaryMask> masks, std::span<const int> ranks,
                               std::size_t width, std::size_t height) {
  if (masks.size() != ranks.size()) {
    throw DimensionError("render_rank_map: " + std::to_string(masks.size()) + " masks but " +
                         std::to_string(ranks.size()) + " ranks");
  }
  const std::size_t n = masks.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks[a] > ranks[b]; });
  RankMap out(width, height, 0.0);
  for (std::size_t i : order) {
    const BinaryMask& m = masks[i];
    if (m.width() != width || m.height() != height) {
      throw DimensionError("render_rank_map: mask " + std::to_string(i) + " is " +
                           std::to_string(m.width()) + "x" + std::to_string(m.height()) +
                           ", expected " + std::to_string(width) + "x" + std::to_string(height));
    }
    if (ranks[i] < 1 || static_cast<std::size_t>(ranks[i]) > n) {
      throw DimensionError("render_rank_map: rank out of range");
    }
    const double level = static_cast<double>(n - static_cast<std::size_t>(ranks[i]) + 1) / static_cast<double>(n);
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (m[p]) out[p] = level;
    }
  }
  return out;
}

/// Bilinear resize of a binary mask to height×width (half-pixel centres, edge clamp).
inline std::vector<double> downsample_mask(const BinaryMask& mask, std::size_t height, std::size_t width) {
  if (mask.empty()) throw DimensionError("downsample_mask: empty mask");
  const double sy = static_cast<double>(mask.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(mask.width()) / static_cast<double>(width);
  auto axis = [](std::size_t i, double scale, std::size_t extent) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, extent - 1);
    return std::tuple{lo, hi, src - static_cast<double>(lo)};
  };
  std::vector<double> out(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    auto [y0, y1, wy] = axis(i, sy, mask.height());
    for (std::size_t j = 0; j < width; ++j) {
      auto [x0, x1, wx] = axis(j, sx, mask.width());
      const double top = (1 - wx) * (mask(y0, x0) ? 1.0 : 0.0) + wx * (mask(y0, x1) ? 1.0 : 0.0);
      const double bottom = (1 - wx) * (mask(y1, x0) ? 1.0 : 0.0) + wx * (mask(y1, x1) ? 1.0 : 0.0);
      out[i * width + j] = (1 - wy) * top + wy * bottom;
    }
  }
  return out;
}

/// Stacks per-frame object-mean value maps and mixes them over time.
/// With `idr` null the mixing is the identity (final = f_vᵀ).
inline TemporalAttention temporal_attention(std::span<const Var> frame_values, const IdrVars* idr) {
  if (frame_values.empty()) throw DimensionError("temporal_attention: no frames");
  std::vector<Var> pooled;
  pooled.reserve(frame_values.size());
  for (const Var& v : frame_values) pooled.push_back(mean_axis(v, 0));
  Var stacked = stack(pooled);
  if (idr == nullptr) return {stacked, Var{}, stacked};

  const Shape& s = stacked.shape();
  const std::size_t t = s[0], chw = s[1] * s[2] * s[3];
  Var key = reshape(conv1x1(stacked, idr->k), {t, chw});
  Var query = transpose_last2(reshape(conv1x1(stacked, idr->q), {t, chw}));
  Var value = reshape(conv1x1(stacked, idr->v), {t, chw});
  Var attention = scaled_softmax(matmul(key, query), chw);
  Var final = reshape(matmul(attention, value), s);
  return {stacked, attention, final};
}

/// Scores the objects of one frame from its relation features and final map.
inline Var score_objects(Var relation, Var final_map, std::span<const BinaryMask> masks,
                         const RefinementVars& refine) {
  const Shape& s = relation.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], hw = h * w;
  if (masks.size() != n) {
    throw DimensionError("score_objects: " + std::to_string(n) + " objects but " +
                         std::to_string(masks.size()) + " masks");
  }
  Var frame_map = transpose_last2(reshape(final_map, {c, hw}));                 // HW×C
  Var fused = reshape(matmul(reshape(relation, {n * c, hw}), frame_map), {n, c, c});
  Var pooled = mean_axis(fused, 2);                                             // N×C

  std::vector<double> mask_rows;
  mask_rows.reserve(n * hw);
  for (const BinaryMask& m : masks) {
    std::vector<double> d = downsample_mask(m, h, w);
    mask_rows.insert(mask_rows.end(), d.begin(), d.end());
  }
  Var mask_in = relation.tape().constant(Tensor({n, hw}, std::move(mask_rows)));
  Var mask_vec = linear(mask_in, refine.mask_weight, refine.mask_bias);        // N×C

  const Var parts[] = {pooled, mask_vec};
  Var joint = concat(parts, 1);                                                 // N×2C
  return reshape(linear(joint, refine.score_weight, refine.score_bias), {n});
}

inline std::vector<IdrFrameOutput> idr_forward(std::span<const FrameObjects> frames, const IdrVars* idr,
                                               const RefinementVars& refine) {
  if (frames.empty()) throw DimensionError("idr_forward: no frames");
  const Shape& ref = frames[0].relation.shape();
  if (ref.size() != 4) throw DimensionError("idr_forward: relation must be N×C×H×W");
  std::vector<Var> values;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Shape& r = frames[t].relation.shape();
    const Shape& v = frames[t].value.shape();
    if (r.size() != 4 || v != r) {
      throw DimensionError("idr_forward: frame " + std::to_string(t) + " relation " + shape_string(r) +
                           " and value " + shape_string(v) + " disagree");
    }
    if (r[1] != ref[1] || r[2] != ref[2] || r[3] != ref[3]) {
      throw DimensionError("idr_forward: frame " + std::to_string(t) + " has C/H/W " + shape_string(r) +
                           ", frame 0 has " + shape_string(ref));
    }
    if (frames[t].initial_masks.size() != r[0]) {
      throw DimensionError("idr_forward: frame " + std::to_string(t) + " needs one mask per object");
    }
    values.push_back(frames[t].value);
  }

  TemporalAttention temporal = temporal_attention(values, idr);
  std::vector<IdrFrameOutput> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FrameObjects& f = frames[t];
    Var scores = score_objects(f.relation, select(temporal.final, t), f.initial_masks, refine);
    RankedFrame ranked;
    ranked.scores = scores.value().vector();
    ranked.ranks = rank_assign(ranked.scores);
    const BinaryMask& m0 = f.initial_masks.front();
    ranked.rank_map = render_rank_map(f.initial_masks, ranked.ranks, m0.width(), m0.height());
    out.push_back({scores, std::move(ranked)});
  }
  return out;
}

inline std::vector<IdrFrameOutput> idr_forward(std::span<const FrameObjects> frames, const IdrVars& idr,
                                               const RefinementVars& refine,
                                               TemporalMode mode = TemporalMode::kAttention) {
  return idr_forward(frames, mode == TemporalMode::kAttention ? &idr : nullptr, refine);
}

}  // namespace vsor

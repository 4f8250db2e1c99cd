#pragma once

// Straight-line reference implementations used as test oracles. They share no
// code with the library beyond plain data types: nested loops over flat
// arrays, no tape, no helper kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "vsor/annotation.hpp"
#include "vsor/iar.hpp"
#include "vsor/idr.hpp"
#include "vsor/metrics.hpp"

namespace oracle {

using vsor::BinaryMask;
using vsor::Tensor;

inline std::vector<double> conv(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t hw,
                                const Tensor& w, const Tensor& b) {
  std::vector<double> y(n * c * hw);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t p = 0; p < hw; ++p) {
        double acc = b[o];
        for (std::size_t k = 0; k < c; ++k) acc += w[o * c + k] * x[(i * c + k) * hw + p];
        y[(i * c + o) * hw + p] = acc;
      }
  return y;
}

inline void softmax_rows(std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double top = m[r * cols];
    for (std::size_t j = 1; j < cols; ++j) top = std::max(top, m[r * cols + j]);
    double z = 0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(m[r * cols + j] - top);
    for (std::size_t j = 0; j < cols; ++j) m[r * cols + j] = std::exp(m[r * cols + j] - top) / z;
  }
}

struct IarResult {
  std::vector<double> relation;
  std::vector<double> value;
};

inline IarResult iar(const Tensor& roi, const vsor::IarParams& p) {
  const std::size_t n = roi.extent(0), c = roi.extent(1), hw = roi.extent(2) * roi.extent(3);
  const std::vector<double>& x = roi.vector();
  const std::vector<double> kq = conv(x, n, c, hw, p.kq.weight, p.kq.bias);
  const std::vector<double> v = conv(x, n, c, hw, p.v.weight, p.v.bias);
  std::vector<double> g(hw * c, 0.0);  // g[pos][ch]
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t pos = 0; pos < hw; ++pos) g[pos * c + ch] += v[(i * c + ch) * hw + pos] / static_cast<double>(n);

  IarResult out{x, v};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a(hw * hw);
    for (std::size_t s = 0; s < hw; ++s)
      for (std::size_t t = 0; t < hw; ++t) {
        double dot = 0;
        for (std::size_t ch = 0; ch < c; ++ch) dot += kq[(i * c + ch) * hw + s] * kq[(i * c + ch) * hw + t];
        a[s * hw + t] = dot / std::sqrt(static_cast<double>(c));
      }
    softmax_rows(a, hw, hw);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t s = 0; s < hw; ++s) {
        double acc = 0;
        for (std::size_t t = 0; t < hw; ++t) acc += a[s * hw + t] * g[t * c + ch];
        out.relation[(i * c + ch) * hw + s] += acc;
      }
  }
  return out;
}

/// Bilinear sample of a binary mask at half-pixel-aligned output centres.
inline std::vector<double> resize_mask(const BinaryMask& m, std::size_t h, std::size_t w) {
  std::vector<double> out;
  for (std::size_t i = 0; i < h; ++i) {
    double y = (i + 0.5) * static_cast<double>(m.height()) / static_cast<double>(h) - 0.5;
    y = std::min(std::max(y, 0.0), static_cast<double>(m.height() - 1));
    for (std::size_t j = 0; j < w; ++j) {
      double x = (j + 0.5) * static_cast<double>(m.width()) / static_cast<double>(w) - 0.5;
      x = std::min(std::max(x, 0.0), static_cast<double>(m.width() - 1));
      const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
      const std::size_t y1 = std::min(y0 + 1, m.height() - 1), x1 = std::min(x0 + 1, m.width() - 1);
      const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
      auto px = [&](std::size_t r, std::size_t c) { return m(r, c) ? 1.0 : 0.0; };
      out.push_back(px(y0, x0) * (1 - fy) * (1 - fx) + px(y0, x1) * (1 - fy) * fx + px(y1, x0) * fy * (1 - fx) +
                    px(y1, x1) * fy * fx);
    }
  }
  return out;
}

struct IdrFrame {
  Tensor relation;  // N×C×H×W
  Tensor value;     // N×C×H×W
  std::vector<BinaryMask> masks;
};

/// Per-frame object scores. `temporal` false replaces the T×T attention by the identity.
inline std::vector<std::vector<double>> idr_scores(const std::vector<IdrFrame>& frames, const vsor::IdrParams& p,
                                                   const vsor::RefinementParams& r, bool temporal = true) {
  const std::size_t t_count = frames.size();
  const std::size_t c = frames[0].relation.extent(1), h = frames[0].relation.extent(2),
                    w = frames[0].relation.extent(3), hw = h * w;
  std::vector<double> fv(t_count * c * hw, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t n = frames[t].value.extent(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < c * hw; ++e) fv[t * c * hw + e] += frames[t].value[i * c * hw + e] / static_cast<double>(n);
  }
  std::vector<double> fin = fv;
  if (temporal) {
    const auto k = conv(fv, t_count, c, hw, p.k.weight, p.k.bias);
    const auto q = conv(fv, t_count, c, hw, p.q.weight, p.q.bias);
    const auto v = conv(fv, t_count, c, hw, p.v.weight, p.v.bias);
    std::vector<double> a(t_count * t_count);
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t s = 0; s < t_count; ++s) {
        double dot = 0;
        for (std::size_t e = 0; e < c * hw; ++e) dot += k[t * c * hw + e] * q[s * c * hw + e];
        a[t * t_count + s] = dot / std::sqrt(static_cast<double>(c * hw));
      }
    softmax_rows(a, t_count, t_count);
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t e = 0; e < c * hw; ++e) {
        double acc = 0;
        for (std::size_t s = 0; s < t_count; ++s) acc += a[t * t_count + s] * v[s * c * hw + e];
        fin[t * c * hw + e] = acc;
      }
  }

  std::vector<std::vector<double>> scores(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    const Tensor& rel = frames[t].relation;
    for (std::size_t i = 0; i < rel.extent(0); ++i) {
      double score = r.score_bias[0];
      for (std::size_t a = 0; a < c; ++a) {
        double row = 0;
        for (std::size_t b = 0; b < c; ++b)
          for (std::size_t pos = 0; pos < hw; ++pos)
            row += rel[(i * c + a) * hw + pos] * fin[(t * c + b) * hw + pos];
        score += r.score_weight[a] * row / static_cast<double>(c);
      }
      const std::vector<double> m = resize_mask(frames[t].masks[i], h, w);
      for (std::size_t a = 0; a < c; ++a) {
        double emb = r.mask_bias[a];
        for (std::size_t pos = 0; pos < hw; ++pos) emb += r.mask_weight[a * hw + pos] * m[pos];
        score += r.score_weight[c + a] * emb;
      }
      scores[t].push_back(score);
    }
  }
  return scores;
}

/// Mean absolute difference over all pixels, written as a double loop over rows and columns.
inline double mae(const vsor::RankMap& p, const vsor::RankMap& g) {
  double total = 0;
  for (std::size_t y = 0; y < p.height(); ++y)
    for (std::size_t x = 0; x < p.width(); ++x) total += std::fabs(p(y, x) - g(y, x));
  return total / (static_cast<double>(p.width()) * static_cast<double>(p.height()));
}

inline double overlap(const BinaryMask& a, const BinaryMask& b) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni > 0 ? inter / uni : 0.0;
}

/// Optimal one-to-one matching by exhaustive search: most pairs, then largest
/// total IoU. Returns pred index per GT (−1 when unmatched).
inline std::vector<int> exhaustive_match(const std::vector<BinaryMask>& gt, const std::vector<BinaryMask>& pred,
                                         double threshold) {
  std::vector<int> best(gt.size(), -1), cur(gt.size(), -1);
  std::vector<bool> used(pred.size(), false);
  int best_count = -1;
  double best_total = -1;
  std::function<void(std::size_t, int, double)> go = [&](std::size_t g, int count, double total) {
    if (g == gt.size()) {
      if (count > best_count || (count == best_count && total > best_total)) {
        best = cur;
        best_count = count;
        best_total = total;
      }
      return;
    }
    cur[g] = -1;
    go(g + 1, count, total);
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const double v = overlap(gt[g], pred[p]);
      if (used[p] || v < threshold) continue;
      used[p] = true;
      cur[g] = static_cast<int>(p);
      go(g + 1, count + 1, total + v);
      used[p] = false;
      cur[g] = -1;
    }
  };
  go(0, 0, 0.0);
  return best;
}

/// Pearson correlation from raw sums: (nΣxy − ΣxΣy) / √((nΣx² − (Σx)²)(nΣy² − (Σy)²)).
inline std::optional<double> correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
  if (vx <= 0 || vy <= 0) return std::nullopt;
  return (n * sxy - sx * sy) / std::sqrt(vx * vy);
}

struct SorResult {
  std::optional<double> value;
  std::vector<int> match;
};

inline SorResult sa_sor(const std::vector<vsor::RankedInstance>& gt, const std::vector<vsor::RankedInstance>& pred,
                        double threshold) {
  std::vector<BinaryMask> gm, pm;
  for (const auto& g : gt) gm.push_back(g.mask.pixels);
  for (const auto& p : pred) pm.push_back(p.mask.pixels);
  SorResult out;
  out.match = exhaustive_match(gm, pm, threshold);
  if (gt.size() < 2) return out;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    x.push_back(static_cast<double>(gt.size()) + 1 - gt[i].rank);
    y.push_back(out.match[i] < 0 ? 0.0 : static_cast<double>(pred.size()) + 1 - pred[out.match[i]].rank);
  }
  out.value = correlation(x, y);
  return out;
}

/// Random scene of up to four rectangles on a 16×16 grid, stored as an
/// instance map (so instances are disjoint) with a random rank order.
inline vsor::RankAnnotation random_scene(std::mt19937_64& rng, std::size_t max_objects = 4) {
  std::uniform_int_distribution<std::size_t> count(1, max_objects), coord(0, 15), extent(3, 9);
  const std::size_t k = count(rng);
  std::vector<BinaryMask> masks;
  for (std::size_t i = 0; i < k; ++i) {
    BinaryMask m(16, 16, 0);
    const std::size_t x0 = coord(rng), y0 = coord(rng), w = extent(rng), h = extent(rng);
    for (std::size_t y = y0; y < std::min<std::size_t>(16, y0 + h); ++y)
      for (std::size_t x = x0; x < std::min<std::size_t>(16, x0 + w); ++x) m(y, x) = 1;
    masks.push_back(std::move(m));
  }
  std::vector<int> ranks(k);
  for (std::size_t i = 0; i < k; ++i) ranks[i] = static_cast<int>(i + 1);
  std::shuffle(ranks.begin(), ranks.end(), rng);
  return vsor::annotation_from_masks(masks, ranks);
}

/// Prediction derived from a GT scene: each instance jittered by up to ±2
/// pixels, occasionally dropped, plus an occasional spurious rectangle; ranks shuffled.
inline vsor::RankAnnotation perturbed_scene(const vsor::RankAnnotation& gt, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> shift(-2, 2);
  std::bernoulli_distribution drop(0.15), extra(0.3);
  std::vector<BinaryMask> masks;
  for (const auto& inst : gt.instances()) {
    if (drop(rng)) continue;
    const int dx = shift(rng), dy = shift(rng);
    BinaryMask m(16, 16, 0);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const int sy = y - dy, sx = x - dx;
        if (sy >= 0 && sy < 16 && sx >= 0 && sx < 16 && inst.mask.pixels(sy, sx)) m(y, x) = 1;
      }
    masks.push_back(std::move(m));
  }
  if (masks.empty() || extra(rng)) {
    std::uniform_int_distribution<int> coord(0, 12);
    BinaryMask m(16, 16, 0);
    const int x0 = coord(rng), y0 = coord(rng);
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 4; ++x) m(y, x) = 1;
    masks.push_back(std::move(m));
  }
  std::vector<int> ranks(masks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = static_cast<int>(i + 1);
  std::shuffle(ranks.begin(), ranks.end(), rng);
  return vsor::annotation_from_masks(masks, ranks);
}

}  // namespace oracle

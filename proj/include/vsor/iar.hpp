#pragma once

// Intra-frame adaptive relation: per-object spatial self-attention whose value
// path is pooled over all objects of the frame.
//
//   kq    = conv1x1(roi)                      N×C×H×W, shared key/query map
//   A     = softmax(kqᵀ·kq / √C) per object   N×HW×HW
//   value = conv1x1(roi)                      N×C×H×W
//   g     = mean over objects of value        HW×C
//   rel   = roi + (A·g) laid back out as N×C×H×W

#include <cmath>
#include <cstdint>
#include <utility>

#include "vsor/autodiff.hpp"
#include "vsor/rng.hpp"

namespace vsor {

/// Weight [C_out×C_in] and bias [C_out] of a 1×1 convolution.
struct ConvParams {
  Tensor weight;
  Tensor bias;
};

/// ConvParams registered on a tape.
struct ConvVars {
  Var weight;
  Var bias;
};

inline ConvVars bind(Tape& tape, const ConvParams& p, bool trainable) {
  if (trainable) return {tape.variable(p.weight), tape.variable(p.bias)};
  return {tape.constant(p.weight), tape.constant(p.bias)};
}

inline Var conv1x1(Var x, const ConvVars& p) { return conv1x1(x, p.weight, p.bias); }

/// Uniform(-1/√C_in, 1/√C_in) weights, zero bias.
inline ConvParams init_conv(std::size_t c_out, std::size_t c_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
  return {uniform_tensor({c_out, c_in}, bound, rng), Tensor({c_out}, 0.0)};
}

/// Per-frame stack of object ROI features, N×C×H×W with N ≥ 1.
class RoiFeatureBatch {
 public:
  explicit RoiFeatureBatch(Tensor features) : features_(std::move(features)) {
    if (features_.rank() != 4) {
      throw DimensionError("roi features must be N×C×H×W, got " + shape_string(features_.shape()));
    }
  }

  /// Builds from a flat buffer; N = 0 is rejected as an empty frame.
  static RoiFeatureBatch from_buffer(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                     std::vector<double> data) {
    if (n == 0) throw Error("empty frame: no detected objects");
    return RoiFeatureBatch(Tensor({n, c, h, w}, std::move(data)));
  }

  const Tensor& features() const noexcept { return features_; }
  std::size_t objects() const { return features_.extent(0); }
  std::size_t channels() const { return features_.extent(1); }
  std::size_t height() const { return features_.extent(2); }
  std::size_t width() const { return features_.extent(3); }

 private:
  Tensor features_;
};

struct IarParams {
  ConvParams kq;  // key/query projection, C→C
  ConvParams v;   // value projection, C→C

  std::size_t channels() const { return kq.weight.extent(0); }
};

struct IarVars {
  ConvVars kq;
  ConvVars v;
};

inline IarVars bind(Tape& tape, const IarParams& p, bool trainable) {
  return {bind(tape, p.kq, trainable), bind(tape, p.v, trainable)};
}

struct IarOutput {
  Var relation;
  Var value;
};

inline IarParams iar_param_init(std::size_t channels, std::uint64_t seed) {
  if (channels == 0) throw DimensionError("iar_param_init: channel count must be positive");
  Rng rng(seed);
  IarParams p;
  p.kq = init_conv(channels, channels, rng);
  p.v = init_conv(channels, channels, rng);
  return p;
}

/// Per-object spatial attention N×HW×HW of the shared key/query map.
inline Var iar_attention(Var kq) {
  const Shape& s = kq.shape();
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  Var query = reshape(kq, {n, c, hw});
  Var key = transpose_last2(query);  // N×HW×C
  return scaled_softmax(batched_matmul(key, query), c);
}

inline IarOutput iar_forward(Var roi, const IarVars& params) {
  const Shape& s = roi.shape();
  if (s.size() != 4) throw DimensionError("iar_forward: roi must be N×C×H×W, got " + shape_string(s));
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], hw = h * w;
  for (const ConvVars* p : {&params.kq, &params.v}) {
    if (p->weight.shape() != Shape{c, c}) {
      throw DimensionError("iar_forward: projection " + shape_string(p->weight.shape()) +
                           " does not fit " + std::to_string(c) + " input channels");
    }
  }

  Var attention = iar_attention(conv1x1(roi, params.kq));
  Var value = conv1x1(roi, params.v);
  Var global = transpose_last2(reshape(mean_axis(value, 0), {c, hw}));  // HW×C

  Var mixed = matmul(reshape(attention, {n * hw, hw}), global);  // (N·HW)×C
  Var agg = reshape(transpose_last2(reshape(mixed, {n, hw, c})), {n, c, h, w});
  return {add(roi, agg), value};
}

/// Inference on plain tensors: returns (relation, value).
inline std::pair<Tensor, Tensor> iar_forward(const RoiFeatureBatch& roi, const IarParams& params) {
  Tape tape;
  IarOutput out = iar_forward(tape.constant(roi.features()), bind(tape, params, false));
  return {out.relation.value(), out.value.value()};
}

}  // namespace vsor

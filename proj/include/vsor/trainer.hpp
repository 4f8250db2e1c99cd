#pragma once

// Desk-scale training and evaluation of the ranking pipeline
// (synthetic ROI features → IAR → IDR → refinement → scores).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vsor/annotation.hpp"
#include "vsor/dataset.hpp"
#include "vsor/iar.hpp"
#include "vsor/idr.hpp"
#include "vsor/metrics.hpp"
#include "vsor/parallel.hpp"
#include "vsor/ranking_loss.hpp"
#include "vsor/rng.hpp"

namespace vsor {

/// Ablation variants: which relation modules are wired in.
enum class Variant { kBasic, kBasicIar, kBasicIdr, kFull };

inline bool uses_iar(Variant v) { return v == Variant::kBasicIar || v == Variant::kFull; }
inline bool uses_idr(Variant v) { return v == Variant::kBasicIdr || v == Variant::kFull; }

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kBasic: return "basic";
    case Variant::kBasicIar: return "basic_iar";
    case Variant::kBasicIdr: return "basic_idr";
    case Variant::kFull: return "full";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "basic") return Variant::kBasic;
  if (s == "basic_iar") return Variant::kBasicIar;
  if (s == "basic_idr") return Variant::kBasicIdr;
  if (s == "full") return Variant::kFull;
  throw ValidationError(ValidationKind::kInvalidConfig, "unknown variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::kFull;
  std::size_t channels = 16;  // C
  std::size_t height = 7;     // H
  std::size_t width = 7;      // W
  std::size_t frames = 3;     // T
  double margin = kDefaultRankMargin;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t iterations = 2000;
  std::uint64_t seed = 1;
  double iou_threshold = kDefaultIouThreshold;

  void validate() const {
    auto fail = [](const std::string& why) { return ValidationError(ValidationKind::kInvalidConfig, why); };
    if (channels < 1 || height < 1 || width < 1 || frames < 1) throw fail("C, H, W, T must be positive");
    if (!(margin > 0.0)) throw fail("rank_loss.margin must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw fail("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw fail("momentum must be in [0,1)");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) throw fail("weight_decay must be in [0,1)");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw fail("iou threshold must be in (0,1]");
  }
};

struct ModelParams {
  IarParams iar;
  IdrParams idr;
  RefinementParams refine;

  /// Every learnable tensor with a stable dotted name.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() { return collect<Tensor>(*this); }
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const { return collect<const Tensor>(*this); }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    const auto ta = a.named_tensors(), tb = b.named_tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (!(*ta[i].second == *tb[i].second)) return false;
    }
    return true;
  }

 private:
  template <class T, class Self>
  static std::vector<std::pair<std::string, T*>> collect(Self& p) {
    return {{"iar.kq.weight", &p.iar.kq.weight}, {"iar.kq.bias", &p.iar.kq.bias},
            {"iar.v.weight", &p.iar.v.weight},   {"iar.v.bias", &p.iar.v.bias},
            {"idr.k.weight", &p.idr.k.weight},   {"idr.k.bias", &p.idr.k.bias},
            {"idr.q.weight", &p.idr.q.weight},   {"idr.q.bias", &p.idr.q.bias},
            {"idr.v.weight", &p.idr.v.weight},   {"idr.v.bias", &p.idr.v.bias},
            {"refine.mask.weight", &p.refine.mask_weight}, {"refine.mask.bias", &p.refine.mask_bias},
            {"refine.score.weight", &p.refine.score_weight}, {"refine.score.bias", &p.refine.score_bias}};
  }
};

inline ModelParams init_model_params(const ModelConfig& cfg) {
  return {iar_param_init(cfg.channels, derive_seed(cfg.seed, 1)),
          idr_param_init(cfg.channels, derive_seed(cfg.seed, 2)),
          refinement_param_init(cfg.channels, cfg.height, cfg.width, derive_seed(cfg.seed, 3))};
}

inline nlohmann::ordered_json params_to_json(const ModelParams& p) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [name, t] : p.named_tensors()) {
    doc[name] = {{"shape", t->shape()}, {"data", t->vector()}};
  }
  return doc;
}

inline ModelParams params_from_json(const nlohmann::json& doc) {
  ModelParams p;
  for (auto& [name, t] : p.named_tensors()) {
    if (!doc.contains(name)) throw ValidationError(ValidationKind::kMalformedJson, "params: missing " + name);
    try {
      *t = Tensor(doc[name].at("shape").get<Shape>(), doc[name].at("data").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(ValidationKind::kMalformedJson, "params: " + name + ": " + e.what());
    }
  }
  return p;
}

/// ModelParams registered on one tape.
struct BoundModel {
  IarVars iar;
  IdrVars idr;
  RefinementVars refine;
};

inline BoundModel bind(Tape& tape, const ModelParams& p, bool trainable) {
  return {bind(tape, p.iar, trainable), bind(tape, p.idr, trainable), bind(tape, p.refine, trainable)};
}

/// Runs the configured variant over one sequence. Without IAR the raw ROI
/// features serve as both relation and value features; without IDR each
/// frame keeps its own pooled value map.
inline std::vector<IdrFrameOutput> run_model(Tape& tape, const BoundModel& model, const ModelConfig& cfg,
                                             const SequenceSample& seq) {
  if (seq.frames.empty()) throw DimensionError("run_model: empty sequence");
  std::vector<FrameObjects> frames;
  frames.reserve(seq.frames.size());
  for (const FrameData& f : seq.frames) {
    if (f.features.rank() != 4 || f.features.extent(1) != cfg.channels || f.features.extent(2) != cfg.height ||
        f.features.extent(3) != cfg.width) {
      throw DimensionError("run_model: features " + shape_string(f.features.shape()) +
                           " do not match the configured C×H×W");
    }
    Var roi = tape.constant(f.features);
    if (uses_iar(cfg.variant)) {
      IarOutput out = iar_forward(roi, model.iar);
      frames.push_back({out.relation, out.value, f.initial_masks});
    } else {
      frames.push_back({roi, roi, f.initial_masks});
    }
  }
  return idr_forward(frames, uses_idr(cfg.variant) ? &model.idr : nullptr, model.refine);
}

// ---------------------------------------------------------------------------
// Evaluation

struct FrameEval {
  std::optional<double> sa_sor;
  double mae = 0.0;
};

struct EvalSummary {
  std::optional<double> sa_sor;   // mean over frames where SA-SOR is defined
  std::size_t sa_sor_undefined = 0;
  double mae = 0.0;               // mean over all frames
  std::size_t frame_count = 0;
};

inline EvalSummary summarize(std::span<const FrameEval> frames) {
  EvalSummary s;
  s.frame_count = frames.size();
  double sor_total = 0.0, mae_total = 0.0;
  std::size_t defined = 0;
  for (const FrameEval& f : frames) {
    mae_total += f.mae;
    if (f.sa_sor) {
      sor_total += *f.sa_sor;
      ++defined;
    } else {
      ++s.sa_sor_undefined;
    }
  }
  if (defined > 0) s.sa_sor = sor_total / static_cast<double>(defined);
  if (!frames.empty()) s.mae = mae_total / static_cast<double>(frames.size());
  return s;
}

/// Scores a predicted annotation against the ground truth.
inline FrameEval evaluate_frame(const RankAnnotation& gt, const RankAnnotation& pred,
                                double iou_threshold = kDefaultIouThreshold) {
  FrameEval e;
  e.mae = mae(annotation_to_rank_map(pred), annotation_to_rank_map(gt));
  const auto gt_inst = gt.instances();
  const auto pred_inst = pred.instances();
  e.sa_sor = sa_sor(gt_inst, pred_inst, iou_threshold);
  return e;
}

/// Scores model output (masks + ranks + rendered map) against the ground truth.
inline FrameEval evaluate_frame(const RankAnnotation& gt, std::span<const BinaryMask> masks,
                                const RankedFrame& pred, double iou_threshold = kDefaultIouThreshold) {
  FrameEval e;
  e.mae = mae(pred.rank_map, annotation_to_rank_map(gt));
  std::vector<RankedInstance> pred_inst;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    pred_inst.push_back({InstanceMask{masks[i], static_cast<int>(i + 1)}, pred.ranks[i]});
  }
  e.sa_sor = sa_sor(gt.instances(), pred_inst, iou_threshold);
  return e;
}

/// Per-frame predictions of the model for one sequence.
inline std::vector<RankedFrame> predict(const ModelParams& params, const ModelConfig& cfg, const SequenceSample& seq) {
  Tape tape;
  BoundModel model = bind(tape, params, false);
  std::vector<RankedFrame> out;
  for (auto& f : run_model(tape, model, cfg, seq)) out.push_back(std::move(f.ranked));
  return out;
}

/// Frame-level metrics over a set of sequences, in sequence then frame order.
inline std::vector<FrameEval> evaluate_frames(const ModelParams& params, const ModelConfig& cfg,
                                              std::span<const SequenceSample> eval_set) {
  std::vector<std::vector<FrameEval>> per_seq(eval_set.size());
  parallel_for(eval_set.size(), [&](std::size_t s) {
    const SequenceSample& seq = eval_set[s];
    const std::vector<RankedFrame> pred = predict(params, cfg, seq);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      per_seq[s].push_back(evaluate_frame(seq.annotations[t], seq.frames[t].initial_masks, pred[t], cfg.iou_threshold));
    }
  });
  std::vector<FrameEval> all;
  for (auto& v : per_seq) all.insert(all.end(), v.begin(), v.end());
  return all;
}

inline EvalSummary evaluate(const ModelParams& params, const ModelConfig& cfg,
                            std::span<const SequenceSample> eval_set) {
  if (eval_set.empty()) throw ValidationError(ValidationKind::kEmptyInput, "evaluate: empty eval set");
  const std::vector<FrameEval> frames = evaluate_frames(params, cfg, eval_set);
  return summarize(frames);
}

// ---------------------------------------------------------------------------
// Training

struct TrainReport {
  std::vector<double> loss_curve;  // per iteration, summed over the sequence's frames
  EvalSummary eval;
  double wall_clock_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

/// SGD with heavy-ball momentum and decoupled weight decay:
///   v ← μ·v + g,   θ ← (1 − λ)·θ − η·v
/// The decay term does not scale with η, so it shrinks weights even at η = 0.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum, double weight_decay)
      : lr_(learning_rate), mu_(momentum), decay_(weight_decay) {}

  void step(Tensor& param, const Tensor& grad, std::vector<double>& velocity) const {
    if (velocity.size() != param.size()) velocity.assign(param.size(), 0.0);
    for (std::size_t i = 0; i < param.size(); ++i) {
      velocity[i] = mu_ * velocity[i] + grad[i];
      param[i] = (1.0 - decay_) * param[i] - lr_ * velocity[i];
    }
  }

 private:
  double lr_;
  double mu_;
  double decay_;
};

/// Names of the parameter groups the variant actually uses.
inline bool is_active(const std::string& name, Variant v) {
  if (name.starts_with("iar.")) return uses_iar(v);
  if (name.starts_with("idr.")) return uses_idr(v);
  return true;
}

/// Summed rank loss of one sequence on `tape`.
inline Var sequence_loss(Tape& tape, const BoundModel& model, const ModelConfig& cfg, const SequenceSample& seq) {
  std::vector<IdrFrameOutput> out = run_model(tape, model, cfg, seq);
  std::optional<Var> total;
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (out[t].scores.size() < 2) continue;
    const std::vector<int> ranks = seq.object_ranks(t);
    Var term = total_loss(rank_loss(out[t].scores, ranks, cfg.margin));
    total = total ? add(*total, term) : term;
  }
  if (!total) throw ValidationError(ValidationKind::kEmptyInput, "sequence has no frame with two or more objects");
  return *total;
}

inline TrainResult train(const ModelConfig& cfg, std::span<const SequenceSample> train_set,
                         std::span<const SequenceSample> eval_set) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError(ValidationKind::kEmptyInput, "train: empty training set");
  if (eval_set.empty()) throw ValidationError(ValidationKind::kEmptyInput, "train: empty eval set");
  const auto started = std::chrono::steady_clock::now();

  TrainResult result{init_model_params(cfg), {}};
  auto named = result.params.named_tensors();
  std::vector<std::vector<double>> velocity(named.size());
  const SgdMomentum optimizer(cfg.learning_rate, cfg.momentum, cfg.weight_decay);

  Rng order_rng(derive_seed(cfg.seed, 4));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const SequenceSample& seq = train_set[order[cursor++]];

    Tape tape;
    BoundModel model = bind(tape, result.params, true);
    auto diverged = [&](const std::string& detail) {
      return TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (" + detail +
                              "); lower learning_rate");
    };
    std::optional<Var> loss;
    try {
      loss = sequence_loss(tape, model, cfg, seq);
    } catch (const NumericError& e) {
      throw diverged(e.what());
    }
    const double value = loss->value()[0];
    if (!std::isfinite(value)) throw diverged("loss " + std::to_string(value));
    result.report.loss_curve.push_back(value);
    tape.backward(*loss);

    const std::vector<Var> vars = {model.iar.kq.weight, model.iar.kq.bias, model.iar.v.weight, model.iar.v.bias,
                                   model.idr.k.weight,  model.idr.k.bias,  model.idr.q.weight, model.idr.q.bias,
                                   model.idr.v.weight,  model.idr.v.bias,  model.refine.mask_weight,
                                   model.refine.mask_bias, model.refine.score_weight, model.refine.score_bias};
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (!is_active(named[i].first, cfg.variant)) continue;
      optimizer.step(*named[i].second, tape.grad(vars[i]), velocity[i]);
    }
  }

  result.report.eval = evaluate(result.params, cfg, eval_set);
  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace vsor

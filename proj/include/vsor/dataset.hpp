#pragma once

// Sequences on disk, dataset statistics, and the synthetic moving-rectangles
// generator used for desk-scale training.
//
// Layout of one sequence directory:
//   <seq>/manifest.json        {"frames": [0, 1, 2, ...]}  (temporal order)
//   <seq>/frames/<idx>.pgm     16-bit instance map
//   <seq>/ranks/<idx>.json     rank sidecar
//   <seq>/features/<idx>.roi   optional ROI features: one JSON header line, then
//                              raw little-endian fp64 samples

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsor/annotation.hpp"
#include "vsor/error.hpp"
#include "vsor/iar.hpp"
#include "vsor/idr.hpp"
#include "vsor/image.hpp"
#include "vsor/rng.hpp"

namespace vsor {

// ---------------------------------------------------------------------------
// ROI feature files

inline std::string encode_roi_features(const Tensor& t) {
  nlohmann::ordered_json header;
  header["dtype"] = "float64";
  header["endianness"] = "little";
  header["shape"] = t.shape();
  std::string out = header.dump() + "\n";
  const std::size_t offset = out.size();
  out.resize(offset + t.size() * sizeof(double));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    for (std::size_t b = 0; b < 8; ++b) {
      out[offset + i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return out;
}

inline Tensor decode_roi_features(std::string_view bytes) {
  auto fail = [](const std::string& why) { return ValidationError(ValidationKind::kMalformedJson, "roi features: " + why); };
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string_view::npos) throw fail("missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, eol));
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(e.what());
  }
  if (header.value("dtype", "") != "float64" || header.value("endianness", "") != "little") {
    throw fail("only little-endian float64 is supported");
  }
  if (!header.contains("shape") || !header["shape"].is_array()) throw fail("missing shape");
  Shape shape;
  for (const auto& e : header["shape"]) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) throw fail("shape extents must be positive integers");
    shape.push_back(e.get<std::size_t>());
  }
  if (shape.empty()) throw fail("empty shape");
  const std::size_t count = shape_size(shape);
  const std::string_view payload = bytes.substr(eol + 1);
  if (payload.size() != count * 8) {
    throw fail("payload has " + std::to_string(payload.size()) + " bytes, shape needs " + std::to_string(count * 8));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[i * 8 + b])) << (8 * b);
    }
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save_roi_features(const fs::path& path, const Tensor& t) { write_file(path, encode_roi_features(t)); }

inline Tensor load_roi_features(const fs::path& path) {
  try {
    return decode_roi_features(read_file(path));
  } catch (const ValidationError& e) {
    if (e.kind() == ValidationKind::kMissingFile) throw;
    throw ValidationError(e.kind(), path.string() + ": " + e.detail());
  }
}

// ---------------------------------------------------------------------------
// Sequences

/// One frame of detector substitutes: ROI features plus a rank-agnostic mask per object.
struct FrameData {
  Tensor features;                       // N×C×H×W
  std::vector<BinaryMask> initial_masks;  // N masks at frame resolution

  std::size_t objects() const { return features.extent(0); }
};

struct SequenceSample {
  std::vector<FrameData> frames;
  std::vector<RankAnnotation> annotations;
  std::uint64_t seed = 0;
  std::vector<bool> swap_events;  // swap_events[t]: latent saliency redrawn at frame t

  /// GT rank of every object of frame t, aligned with the feature order.
  std::vector<int> object_ranks(std::size_t t) const {
    const RankAnnotation& a = annotations.at(t);
    std::vector<int> out;
    for (std::size_t i = 0; i < frames.at(t).objects(); ++i) {
      out.push_back(a.ranks.at(static_cast<std::uint16_t>(i + 1)));
    }
    return out;
  }
};

inline std::string frame_stem(int index) { return std::to_string(index); }

inline std::vector<int> read_manifest(const fs::path& seq_dir) {
  const fs::path path = seq_dir / "manifest.json";
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(ValidationKind::kMalformedJson, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("frames") || !doc["frames"].is_array()) {
    throw ValidationError(ValidationKind::kMalformedJson, path.string() + ": expected {\"frames\": [...]}");
  }
  std::vector<int> frames;
  for (const auto& f : doc["frames"]) {
    if (!f.is_number_integer() || f.get<int>() < 0) {
      throw ValidationError(ValidationKind::kMalformedJson, path.string() + ": frame indices must be non-negative integers");
    }
    frames.push_back(f.get<int>());
  }
  return frames;
}

inline void write_manifest(const fs::path& seq_dir, std::span<const int> frames, std::optional<std::uint64_t> seed = {}) {
  nlohmann::ordered_json doc;
  doc["frames"] = std::vector<int>(frames.begin(), frames.end());
  if (seed) doc["seed"] = *seed;
  write_file(seq_dir / "manifest.json", doc.dump(2) + "\n");
}

inline fs::path frame_pgm_path(const fs::path& seq, int idx) { return seq / "frames" / (frame_stem(idx) + ".pgm"); }
inline fs::path frame_ranks_path(const fs::path& seq, int idx) { return seq / "ranks" / (frame_stem(idx) + ".json"); }
inline fs::path frame_features_path(const fs::path& seq, int idx) { return seq / "features" / (frame_stem(idx) + ".roi"); }

inline RankAnnotation load_frame_annotation(const fs::path& seq, int idx) {
  return load_annotation(frame_pgm_path(seq, idx), frame_ranks_path(seq, idx));
}

/// Sequence directories under `root`: root itself when it has a manifest,
/// otherwise every immediate subdirectory with one, sorted by name.
inline std::vector<fs::path> discover_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw ValidationError(ValidationKind::kMissingFile, root.string() + " is not a directory");
  }
  if (fs::exists(root / "manifest.json")) return {root};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void write_sequence(const fs::path& seq_dir, const SequenceSample& s) {
  std::vector<int> indices;
  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    const int idx = static_cast<int>(t);
    indices.push_back(idx);
    save_annotation(s.annotations[t], frame_pgm_path(seq_dir, idx), frame_ranks_path(seq_dir, idx));
    save_roi_features(frame_features_path(seq_dir, idx), s.frames[t].features);
  }
  write_manifest(seq_dir, indices, s.seed);
}

/// Reads annotations and ROI features. Object i of a frame is instance id i+1;
/// its initial mask is that instance's region in the map.
inline SequenceSample load_sequence(const fs::path& seq_dir) {
  SequenceSample s;
  for (int idx : read_manifest(seq_dir)) {
    RankAnnotation a = load_frame_annotation(seq_dir, idx);
    Tensor features = load_roi_features(frame_features_path(seq_dir, idx));
    if (features.rank() != 4 || features.extent(0) != a.instance_count()) {
      throw ValidationError(ValidationKind::kShapeMismatch,
                            frame_features_path(seq_dir, idx).string() + ": feature shape " +
                                shape_string(features.shape()) + " does not match " +
                                std::to_string(a.instance_count()) + " annotated instances");
    }
    FrameData f{std::move(features), {}};
    for (std::size_t i = 0; i < a.instance_count(); ++i) {
      if (!a.ranks.contains(static_cast<std::uint16_t>(i + 1))) {
        throw ValidationError(ValidationKind::kIdRankMismatch,
                              frame_ranks_path(seq_dir, idx).string() + ": instance ids must be 1..K");
      }
    }
    for (auto& inst : a.instances()) f.initial_masks.push_back(std::move(inst.mask.pixels));
    s.frames.push_back(std::move(f));
    s.annotations.push_back(std::move(a));
  }
  s.swap_events.assign(s.frames.size(), false);
  return s;
}

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  std::size_t frame_count = 0;  // frames scanned
  std::size_t unit_count = 0;   // histogram denominator: frames, or videos in the per-video view
  double invalid_rate = 0.0;    // fraction of units with fewer than two salient objects
  std::array<double, 5> count_histogram{};  // units whose (max) object count is ≤1, 2, 3, 4, 5+
};

inline std::size_t histogram_bin(std::size_t count) { return count <= 1 ? 0 : std::min<std::size_t>(count, 5) - 1; }

/// Histogram over per-unit salient-object counts.
inline DatasetStats compute_stats(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ValidationError(ValidationKind::kEmptyInput, "compute_stats: no frames");
  DatasetStats s;
  s.frame_count = counts.size();
  s.unit_count = counts.size();
  std::array<std::size_t, 5> bins{};
  for (std::size_t c : counts) ++bins[histogram_bin(c)];
  for (std::size_t b = 0; b < bins.size(); ++b) {
    s.count_histogram[b] = static_cast<double>(bins[b]) / static_cast<double>(counts.size());
  }
  s.invalid_rate = s.count_histogram[0];
  return s;
}

inline DatasetStats compute_stats(std::span<const RankAnnotation> annotations) {
  std::vector<std::size_t> counts;
  for (const auto& a : annotations) counts.push_back(a.instance_count());
  return compute_stats(counts);
}

/// Per-video view: each video contributes the maximum object count over its frames.
inline DatasetStats compute_video_stats(std::span<const std::vector<std::size_t>> videos) {
  std::vector<std::size_t> maxima;
  std::size_t frames = 0;
  for (const auto& v : videos) {
    if (v.empty()) continue;
    maxima.push_back(*std::max_element(v.begin(), v.end()));
    frames += v.size();
  }
  DatasetStats s = compute_stats(maxima);
  s.frame_count = frames;
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

struct SynthConfig {
  std::size_t frames = 3;  // T
  std::size_t min_objects = 3;
  std::size_t max_objects = 3;
  std::size_t channels = 16;
  std::size_t roi_height = 7;
  std::size_t roi_width = 7;
  std::size_t frame_width = 64;
  std::size_t frame_height = 64;
  double rank_swap_prob = 0.1;
  double noise_level = 0.0;

  void validate() const {
    auto fail = [](const std::string& why) { return ValidationError(ValidationKind::kInvalidConfig, "synth: " + why); };
    if (frames < 1) throw fail("T must be at least 1");
    if (min_objects < 2) throw fail("minimum object count must be at least 2");
    if (max_objects < min_objects) throw fail("maximum object count below minimum");
    if (channels < 1 || roi_height < 1 || roi_width < 1) throw fail("C, H, W must be positive");
    if (frame_width < 8) throw fail("frame width must be at least 8");
    if (frame_height < 3 * max_objects) throw fail("frame height too small for the object lanes");
    if (!(rank_swap_prob >= 0.0 && rank_swap_prob <= 1.0)) throw fail("rank_swap_prob must be in [0,1]");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) throw fail("noise_level must be non-negative");
  }
};

/// Rows/cols of the ROI grid that carry the saliency signature in channel 0.
inline std::pair<std::size_t, std::size_t> signature_span(std::size_t extent) {
  const std::size_t begin = extent / 4;
  return {begin, std::min(extent, begin + (extent + 1) / 2)};
}

/// K rectangles, each confined to its own horizontal lane (masks never overlap),
/// moving with constant velocity. Each object has a latent saliency in
/// [0.1, 1]; at every frame after the first, with probability rank_swap_prob,
/// all latent values are redrawn. GT ranks sort latent saliency descending.
/// ROI features: channel 0 carries the latent saliency over a central block,
/// everything else is zero, plus N(0, noise_level²) noise on every element.
inline SequenceSample synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_objects, cfg.max_objects);
  const std::size_t k = count_dist(rng);
  const std::size_t lane_h = cfg.frame_height / k;
  const std::size_t fw = cfg.frame_width, fh = cfg.frame_height, t_count = cfg.frames;

  struct Rect {
    long x0, y0, w, h, vx;
  };
  std::vector<std::size_t> lanes(k);
  std::iota(lanes.begin(), lanes.end(), std::size_t{0});
  std::shuffle(lanes.begin(), lanes.end(), rng);
  std::vector<Rect> rects;
  for (std::size_t i = 0; i < k; ++i) {
    Rect r{};
    const long lane_top = static_cast<long>(lanes[i] * lane_h);
    const long max_h = std::max<long>(1, static_cast<long>(lane_h) - 2);
    r.h = std::uniform_int_distribution<long>(std::max<long>(1, max_h / 2), max_h)(rng);
    r.y0 = lane_top + std::uniform_int_distribution<long>(0, static_cast<long>(lane_h) - r.h)(rng);
    r.w = std::uniform_int_distribution<long>(static_cast<long>(fw) / 6 + 1, static_cast<long>(fw) / 3 + 1)(rng);
    r.vx = std::uniform_int_distribution<long>(-3, 3)(rng);
    const long travel = r.vx * static_cast<long>(t_count - 1);
    long lo = std::max<long>(0, -travel);
    long hi = static_cast<long>(fw) - r.w - std::max<long>(0, travel);
    if (hi < lo) {
      r.vx = 0;
      lo = 0;
      hi = static_cast<long>(fw) - r.w;
    }
    r.x0 = std::uniform_int_distribution<long>(lo, hi)(rng);
    rects.push_back(r);
  }

  std::uniform_real_distribution<double> saliency_dist(0.1, 1.0);
  std::bernoulli_distribution swap_dist(cfg.rank_swap_prob);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  std::vector<double> latent(k);
  for (double& s : latent) s = saliency_dist(rng);

  const std::size_t c = cfg.channels, h = cfg.roi_height, w = cfg.roi_width;
  const auto [row_lo, row_hi] = signature_span(h);
  const auto [col_lo, col_hi] = signature_span(w);

  SequenceSample sample;
  sample.seed = seed;
  for (std::size_t t = 0; t < t_count; ++t) {
    bool swapped = false;
    if (t > 0 && swap_dist(rng)) {
      swapped = true;
      for (double& s : latent) s = saliency_dist(rng);
    }
    sample.swap_events.push_back(swapped);

    FrameData frame{Tensor({k, c, h, w}, 0.0), {}};
    for (std::size_t i = 0; i < k; ++i) {
      const Rect& r = rects[i];
      BinaryMask mask(fw, fh, 0);
      const long x = r.x0 + r.vx * static_cast<long>(t);
      for (long yy = r.y0; yy < r.y0 + r.h; ++yy) {
        for (long xx = x; xx < x + r.w; ++xx) mask(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = 1;
      }
      frame.initial_masks.push_back(std::move(mask));
      for (std::size_t y = row_lo; y < row_hi; ++y) {
        for (std::size_t xx = col_lo; xx < col_hi; ++xx) frame.features.at({i, 0, y, xx}) = latent[i];
      }
    }
    if (cfg.noise_level > 0.0) {
      for (double& v : frame.features.data()) v += cfg.noise_level * noise_dist(rng);
    }
    const std::vector<int> ranks = rank_assign(latent);
    sample.annotations.push_back(annotation_from_masks(frame.initial_masks, ranks));
    sample.frames.push_back(std::move(frame));
  }
  return sample;
}

}  // namespace vsor

#pragma once

// Run configuration: model hyper-parameters plus the synthetic data recipe.
//
// Accepted file formats (UTF-8):
//   JSON object, nested objects flattened with dots ({"rank_loss": {"margin": 1}})
//   key=value lines, '#' starts a comment
// Every key can be overridden by "key=value" strings (CLI --set).

#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vsor/annotation.hpp"
#include "vsor/dataset.hpp"
#include "vsor/trainer.hpp"

namespace vsor {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline void flatten(const nlohmann::json& node, const std::string& prefix, ConfigMap& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (node.is_array() || node.is_null()) {
    throw ValidationError(ValidationKind::kInvalidConfig, "config key '" + prefix + "' must be a scalar");
  }
  out[prefix] = node.is_string() ? node.get<std::string>() : node.dump();
}

}  // namespace detail

/// Adds one "key=value" assignment.
inline void set_config_entry(ConfigMap& map, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError(ValidationKind::kInvalidConfig, "expected key=value, got '" + std::string(assignment) + "'");
  }
  std::string key = detail::trim(assignment.substr(0, eq));
  if (key.empty()) throw ValidationError(ValidationKind::kInvalidConfig, "empty config key");
  map[key] = detail::trim(assignment.substr(eq + 1));
}

inline ConfigMap parse_config_text(std::string_view text) {
  ConfigMap map;
  const std::string body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(ValidationKind::kMalformedJson, std::string("config: ") + e.what());
    }
    detail::flatten(doc, "", map);
    return map;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (const std::size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    set_config_entry(map, line);
  }
  return map;
}

inline ConfigMap load_config_file(const fs::path& path) {
  try {
    return parse_config_text(read_file(path));
  } catch (const ValidationError& e) {
    if (e.kind() == ValidationKind::kMissingFile) throw;
    throw ValidationError(e.kind(), path.string() + ": " + e.detail());
  }
}

/// Everything a train or synth run needs.
struct RunConfig {
  ModelConfig model;
  SynthConfig synth;
  std::size_t train_sequences = 200;
  std::size_t eval_sequences = 50;
  std::uint64_t data_seed = 1;

  void validate() const {
    model.validate();
    synth.validate();
    if (train_sequences == 0 || eval_sequences == 0) {
      throw ValidationError(ValidationKind::kInvalidConfig, "train_sequences and eval_sequences must be positive");
    }
    if (synth.channels != model.channels || synth.roi_height != model.height || synth.roi_width != model.width ||
        synth.frames != model.frames) {
      throw ValidationError(ValidationKind::kInvalidConfig, "synthetic C/H/W/T disagree with the model");
    }
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError(ValidationKind::kInvalidConfig, "config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

inline double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(ValidationKind::kInvalidConfig, "config key '" + key + "': cannot parse '" + text + "'");
}

}  // namespace detail

/// Applies entries in key order on top of `base`. Unknown keys are rejected.
inline RunConfig apply_config(const ConfigMap& map, RunConfig base = {}) {
  RunConfig c = std::move(base);
  for (const auto& [key, value] : map) {
    auto size = [&] { return detail::parse_number<std::size_t>(key, value); };
    auto real = [&] { return detail::parse_double(key, value); };
    if (key == "variant") {
      c.model.variant = parse_variant(value);
    } else if (key == "C" || key == "channels") {
      c.model.channels = c.synth.channels = size();
    } else if (key == "H" || key == "height") {
      c.model.height = c.synth.roi_height = size();
    } else if (key == "W" || key == "width") {
      c.model.width = c.synth.roi_width = size();
    } else if (key == "T" || key == "frames") {
      c.model.frames = c.synth.frames = size();
    } else if (key == "K") {
      c.synth.min_objects = c.synth.max_objects = size();
    } else if (key == "K_min") {
      c.synth.min_objects = size();
    } else if (key == "K_max") {
      c.synth.max_objects = size();
    } else if (key == "margin" || key == "rank_loss.margin") {
      c.model.margin = real();
    } else if (key == "learning_rate" || key == "lr") {
      c.model.learning_rate = real();
    } else if (key == "momentum") {
      c.model.momentum = real();
    } else if (key == "optimizer") {
      if (value == "sgd") {
        c.model.momentum = 0.0;
      } else if (value != "momentum") {
        throw ValidationError(ValidationKind::kInvalidConfig, "optimizer must be 'sgd' or 'momentum'");
      }
    } else if (key == "weight_decay") {
      c.model.weight_decay = real();
    } else if (key == "iterations") {
      c.model.iterations = size();
    } else if (key == "seed") {
      c.model.seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "data_seed") {
      c.data_seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "iou" || key == "iou_threshold") {
      c.model.iou_threshold = real();
    } else if (key == "noise_level") {
      c.synth.noise_level = real();
    } else if (key == "rank_swap_prob") {
      c.synth.rank_swap_prob = real();
    } else if (key == "frame_width") {
      c.synth.frame_width = size();
    } else if (key == "frame_height") {
      c.synth.frame_height = size();
    } else if (key == "train_sequences") {
      c.train_sequences = size();
    } else if (key == "eval_sequences") {
      c.eval_sequences = size();
    } else {
      throw ValidationError(ValidationKind::kInvalidConfig, "unknown config key '" + key + "'");
    }
  }
  return c;
}

/// The seed-pinned training sets used by the train command and the acceptance run.
struct SyntheticSplit {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> eval;
};

inline SyntheticSplit make_synthetic_split(const RunConfig& c) {
  SyntheticSplit split;
  for (std::size_t i = 0; i < c.train_sequences; ++i) {
    split.train.push_back(synth_generate(c.synth, derive_seed(c.data_seed, 10, i)));
  }
  for (std::size_t i = 0; i < c.eval_sequences; ++i) {
    split.eval.push_back(synth_generate(c.synth, derive_seed(c.data_seed, 11, i)));
  }
  return split;
}

/// Noise level of the standard task used for the ablation comparison.
inline constexpr double kStandardTaskNoise = 0.5;

inline RunConfig standard_task(Variant variant, std::uint64_t seed, double noise_level = kStandardTaskNoise) {
  RunConfig c;
  c.model.variant = variant;
  c.model.seed = seed;
  c.data_seed = seed;
  c.synth.noise_level = noise_level;
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(c.model.variant);
  j["C"] = c.model.channels;
  j["H"] = c.model.height;
  j["W"] = c.model.width;
  j["T"] = c.model.frames;
  j["K_min"] = c.synth.min_objects;
  j["K_max"] = c.synth.max_objects;
  j["margin"] = c.model.margin;
  j["learning_rate"] = c.model.learning_rate;
  j["momentum"] = c.model.momentum;
  j["weight_decay"] = c.model.weight_decay;
  j["iterations"] = c.model.iterations;
  j["seed"] = c.model.seed;
  j["data_seed"] = c.data_seed;
  j["iou_threshold"] = c.model.iou_threshold;
  j["noise_level"] = c.synth.noise_level;
  j["rank_swap_prob"] = c.synth.rank_swap_prob;
  j["frame_width"] = c.synth.frame_width;
  j["frame_height"] = c.synth.frame_height;
  j["train_sequences"] = c.train_sequences;
  j["eval_sequences"] = c.eval_sequences;
  return j;
}

}  // namespace vsor

#pragma once

// Rank annotations: a 16-bit instance-id raster (binary PGM, P5, big-endian
// samples) plus a JSON sidecar {"ranks": {"<id>": <rank>, ...}}.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vsor/error.hpp"
#include "vsor/image.hpp"
#include "vsor/metrics.hpp"
#include "vsor/ranks.hpp"

namespace vsor {

namespace fs = std::filesystem;

struct RankAnnotation {
  InstanceMap instance_map;
  std::map<std::uint16_t, int> ranks;  // instance id → rank, 1 = most salient

  std::size_t instance_count() const noexcept { return ranks.size(); }

  /// Ids present in the raster, ascending.
  std::vector<std::uint16_t> ids_in_map() const {
    std::vector<bool> seen(65536, false);
    for (std::uint16_t v : instance_map.pixels()) seen[v] = true;
    std::vector<std::uint16_t> ids;
    for (std::size_t id = 1; id < seen.size(); ++id) {
      if (seen[id]) ids.push_back(static_cast<std::uint16_t>(id));
    }
    return ids;
  }

  /// Enforces: ids in the raster and the rank table coincide; ranks form 1..K.
  void validate() const {
    const std::vector<std::uint16_t> ids = ids_in_map();
    for (std::uint16_t id : ids) {
      if (!ranks.contains(id)) {
        throw ValidationError(ValidationKind::kIdRankMismatch,
                              "instance id " + std::to_string(id) + " has no rank");
      }
    }
    for (const auto& [id, rank] : ranks) {
      if (id == 0) throw ValidationError(ValidationKind::kIdRankMismatch, "rank given for background id 0");
      if (!std::binary_search(ids.begin(), ids.end(), id)) {
        throw ValidationError(ValidationKind::kIdRankMismatch,
                              "ranked id " + std::to_string(id) + " is absent from the instance map");
      }
    }
    std::vector<int> values;
    for (const auto& entry : ranks) values.push_back(entry.second);
    require_rank_permutation(values, "annotation");
  }

  /// Per-instance binary masks in ascending id order, with their ranks.
  std::vector<RankedInstance> instances() const {
    std::vector<RankedInstance> out;
    for (const auto& [id, rank] : ranks) {
      BinaryMask mask(instance_map.width(), instance_map.height(), 0);
      for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = instance_map[p] == id ? 1 : 0;
      out.push_back({InstanceMask{std::move(mask), id}, rank});
    }
    return out;
  }

  friend bool operator==(const RankAnnotation&, const RankAnnotation&) = default;
};

// ---------------------------------------------------------------------------
// PGM

inline InstanceMap parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) { return ValidationError(ValidationKind::kMalformedPgm, why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) {
    skip_space();
    std::size_t start = pos;
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
      if (v > 1u << 24) throw fail(std::string(field) + " too large");
      ++pos;
    }
    if (pos == start) throw fail(std::string("missing ") + field);
    return static_cast<std::size_t>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("magic is not P5");
  pos = 2;
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw fail("zero image extent");
  if (maxval == 0 || maxval > 65535) throw fail("maxval must be in 1..65535");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw fail("header must end with a single whitespace byte");
  }
  ++pos;
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t needed = width * height * sample_bytes;
  if (bytes.size() - pos < needed) throw fail("pixel data truncated");
  InstanceMap map(width, height, 0);
  for (std::size_t i = 0; i < width * height; ++i) {
    std::uint16_t v;
    if (sample_bytes == 2) {
      v = static_cast<std::uint16_t>((static_cast<unsigned char>(bytes[pos]) << 8) |
                                     static_cast<unsigned char>(bytes[pos + 1]));
    } else {
      v = static_cast<unsigned char>(bytes[pos]);
    }
    if (v > maxval) throw fail("sample exceeds maxval");
    map[i] = v;
    pos += sample_bytes;
  }
  return map;
}

/// Always writes maxval 65535 (two bytes per sample, most significant first).
inline std::string encode_pgm(const InstanceMap& map) {
  std::string out = "P5\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n65535\n";
  out.reserve(out.size() + map.size() * 2);
  for (std::uint16_t v : map.pixels()) {
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(ValidationKind::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

inline InstanceMap read_pgm(const fs::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const ValidationError& e) {
    if (e.kind() == ValidationKind::kMissingFile) throw;
    throw ValidationError(e.kind(), path.string() + ": " + e.detail());
  }
}

inline void write_pgm(const fs::path& path, const InstanceMap& map) { write_file(path, encode_pgm(map)); }

// ---------------------------------------------------------------------------
// Rank sidecar

inline std::map<std::uint16_t, int> parse_ranks_json(std::string_view text) {
  auto fail = [](const std::string& why) { return ValidationError(ValidationKind::kMalformedJson, why); };
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(e.what());
  }
  if (!doc.is_object() || !doc.contains("ranks") || !doc["ranks"].is_object()) {
    throw fail("expected an object with a \"ranks\" object");
  }
  std::map<std::uint16_t, int> ranks;
  for (const auto& [key, value] : doc["ranks"].items()) {
    if (key.empty() || key.size() > 5 || !std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw fail("instance id \"" + key + "\" is not a decimal integer");
    }
    const unsigned long id = std::stoul(key);
    if (id == 0 || id > 65535) throw fail("instance id " + key + " outside 1..65535");
    if (!value.is_number_integer()) throw fail("rank of id " + key + " is not an integer");
    ranks[static_cast<std::uint16_t>(id)] = value.get<int>();
  }
  return ranks;
}

inline std::string encode_ranks_json(const std::map<std::uint16_t, int>& ranks) {
  nlohmann::ordered_json table = nlohmann::ordered_json::object();
  for (const auto& [id, rank] : ranks) table[std::to_string(id)] = rank;
  nlohmann::ordered_json doc;
  doc["ranks"] = table;
  return doc.dump(2) + "\n";
}

inline RankAnnotation load_annotation(const fs::path& instance_map_path, const fs::path& ranks_path) {
  RankAnnotation a;
  a.instance_map = read_pgm(instance_map_path);
  try {
    a.ranks = parse_ranks_json(read_file(ranks_path));
    a.validate();
  } catch (const ValidationError& e) {
    if (e.kind() == ValidationKind::kMissingFile) throw;
    throw ValidationError(e.kind(), ranks_path.string() + ": " + e.detail());
  }
  return a;
}

inline void save_annotation(const RankAnnotation& a, const fs::path& instance_map_path,
                            const fs::path& ranks_path) {
  write_pgm(instance_map_path, a.instance_map);
  write_file(ranks_path, encode_ranks_json(a.ranks));
}

/// Pixel of the instance with rank r → (K−r+1)/K, background 0.
inline RankMap annotation_to_rank_map(const RankAnnotation& a) {
  const std::size_t k = a.ranks.size();
  std::vector<double> level(65536, 0.0);
  for (const auto& [id, rank] : a.ranks) level[id] = saliency_level(rank, k) / static_cast<double>(k);
  RankMap out(a.instance_map.width(), a.instance_map.height(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = level[a.instance_map[p]];
  return out;
}

/// Builds an annotation from disjoint-or-occluding masks; later objects in
/// paint order overwrite earlier ones. Object i receives id i + 1.
inline RankAnnotation annotation_from_masks(std::span<const BinaryMask> masks, std::span<const int> ranks) {
  if (masks.empty()) throw DimensionError("annotation_from_masks: no masks");
  if (masks.size() != ranks.size()) throw DimensionError("annotation_from_masks: mask/rank count mismatch");
  RankAnnotation a;
  a.instance_map = InstanceMap(masks[0].width(), masks[0].height(), 0);
  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // least salient first so the most salient object stays on top
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return ranks[x] > ranks[y]; });
  for (std::size_t i : order) {
    if (!masks[i].same_size(masks[0])) throw DimensionError("annotation_from_masks: mask sizes differ");
    const auto id = static_cast<std::uint16_t>(i + 1);
    for (std::size_t p = 0; p < masks[i].size(); ++p) {
      if (masks[i][p]) a.instance_map[p] = id;
    }
  }
  for (const std::uint16_t id : a.ids_in_map()) a.ranks[id] = 0;
  // Re-rank the visible instances densely, preserving their relative order.
  std::vector<std::pair<int, std::uint16_t>> visible;
  for (const auto& entry : a.ranks) visible.emplace_back(ranks[entry.first - 1], entry.first);
  std::sort(visible.begin(), visible.end());
  for (std::size_t r = 0; r < visible.size(); ++r) a.ranks[visible[r].second] = static_cast<int>(r + 1);
  return a;
}

}  // namespace vsor

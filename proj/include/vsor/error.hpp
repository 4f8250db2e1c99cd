#pragma once

#include <stdexcept>
#include <string>

namespace vsor {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes or extents do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

enum class ValidationKind {
  kMalformedPgm,
  kMalformedJson,
  kIdRankMismatch,
  kNotPermutation,
  kShapeMismatch,
  kInvalidConfig,
  kMissingFile,
  kEmptyInput,
};

inline const char* to_string(ValidationKind kind) {
  switch (kind) {
    case ValidationKind::kMalformedPgm: return "malformed_pgm";
    case ValidationKind::kMalformedJson: return "malformed_json";
    case ValidationKind::kIdRankMismatch: return "id_rank_mismatch";
    case ValidationKind::kNotPermutation: return "not_permutation";
    case ValidationKind::kShapeMismatch: return "shape_mismatch";
    case ValidationKind::kInvalidConfig: return "invalid_config";
    case ValidationKind::kMissingFile: return "missing_file";
    case ValidationKind::kEmptyInput: return "empty_input";
  }
  return "unknown";
}

// Input data violates a documented contract (bad file, bad ranks, bad config).
class ValidationError : public Error {
 public:
  ValidationError(ValidationKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ValidationKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ValidationKind kind_;
  std::string detail_;
};

// A computation produced NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vsor

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vsor/error.hpp"

namespace vsor {

/// Row-major 2D raster. Pixel (row, col) lives at data[row * width + col].
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t width, std::size_t height, T fill = T{})
      : width_(width), height_(height), data_(width * height, fill) {}
  Image(std::size_t width, std::size_t height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
      throw DimensionError("image of " + std::to_string(width_) + "x" + std::to_string(height_) +
                           " needs " + std::to_string(width_ * height_) + " pixels, got " +
                           std::to_string(data_.size()));
    }
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  const std::vector<T>& pixels() const noexcept { return data_; }
  std::vector<T>& pixels() noexcept { return data_; }

  bool same_size(const auto& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> data_;
};

using BinaryMask = Image<std::uint8_t>;
using InstanceMap = Image<std::uint16_t>;
/// Normalized saliency-rank raster, values in [0,1], 0 = background.
using RankMap = Image<double>;

inline std::size_t foreground_count(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.pixels()) n += v ? 1 : 0;
  return n;
}

}  // namespace vsor

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vsor/error.hpp"

namespace vsor {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major fp64 array. Every extent is positive; a scalar has shape {1}.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) + " elements, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  // Multi-index access; slow, meant for tests and setup code.
  double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
  double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw DimensionError("index rank " + std::to_string(index.size()) + " for tensor " +
                           shape_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace vsor

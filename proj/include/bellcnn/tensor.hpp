#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bellcnn {

/// Ordered list of positive extents. Images use (height, width, channels).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t count() const noexcept { return count_; }

  /// "HxWxD" style rendering, e.g. "64x64x1".
  std::string str() const;
  static Shape parse(const std::string& text);

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t count_ = 0;
};

/// Dense row-major (last dimension fastest) array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element of a rank-3 tensor (i, j, k).
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Convolution hyperparameters: filter count, square extent, stride, zero padding.
struct ConvGeometry {
  std::size_t filters = 1;
  std::size_t extent = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct SpatialExtent {
  std::size_t width = 0;
  std::size_t height = 0;
  friend bool operator==(const SpatialExtent&, const SpatialExtent&) = default;
};

/// Output extent along one axis: (in - F + 2P) / S + 1, exact division only.
std::size_t conv_out_extent(std::size_t in, std::size_t extent, std::size_t stride,
                            std::size_t padding);

/// Output width/height of a convolution. Output depth is geom.filters.
SpatialExtent conv_out_dims(std::size_t in_w, std::size_t in_h, const ConvGeometry& geom);

Tensor reshape(const Tensor& t, const Shape& new_shape);
Tensor flatten(const Tensor& t);

}  // namespace bellcnn

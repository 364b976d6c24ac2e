#include "bellcnn/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "bellcnn/error.hpp"

namespace bellcnn {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NonPositiveOutput: return "NonPositiveOutput";
    case ErrorKind::Indivisible: return "Indivisible";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::BadShape: return "BadShape";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::BadInputSize: return "BadInputSize";
    case ErrorKind::StaleCache: return "StaleCache";
    case ErrorKind::FrozenGraphImmutable: return "FrozenGraphImmutable";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NotOneHot: return "NotOneHot";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::BadValue: return "BadValue";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::BadDimensions: return "BadDimensions";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::TrunkDimensionDrift: return "TrunkDimensionDrift";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::DescriptorBlobMismatch: return "DescriptorBlobMismatch";
    case ErrorKind::EmptyTrainSet: return "EmptyTrainSet";
  }
  return "Unknown";
}

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw Error(ErrorKind::BadShape, "shape needs at least one extent");
  std::size_t count = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw Error(ErrorKind::BadShape, "zero extent in shape");
    if (count > std::numeric_limits<std::size_t>::max() / d)
      throw Error(ErrorKind::BadShape, "element count overflows");
    count *= d;
  }
  count_ = count;
}

std::string Shape::str() const {
  std::string out;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(dims_[i]);
  }
  return out;
}

Shape Shape::parse(const std::string& text) {
  std::vector<std::size_t> dims;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw Error(ErrorKind::BadShape, "cannot parse shape '" + text + "'");
    dims.push_back(std::stoull(part));
  }
  return Shape(std::move(dims));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.count(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.count())
    throw Error(ErrorKind::CountMismatch, "data length " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_.str());
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::size_t conv_out_extent(std::size_t in, std::size_t extent, std::size_t stride,
                            std::size_t padding) {
  if (extent == 0 || stride == 0) throw Error(ErrorKind::BadConfig, "extent and stride must be >= 1");
  const std::size_t padded = in + 2 * padding;
  if (padded < extent)
    throw Error(ErrorKind::NonPositiveOutput,
                "input " + std::to_string(in) + " with padding " + std::to_string(padding) +
                    " is smaller than filter " + std::to_string(extent));
  if ((padded - extent) % stride != 0)
    throw Error(ErrorKind::Indivisible, "stride " + std::to_string(stride) +
                                            " does not divide " + std::to_string(padded - extent));
  return (padded - extent) / stride + 1;
}

SpatialExtent conv_out_dims(std::size_t in_w, std::size_t in_h, const ConvGeometry& geom) {
  if (geom.filters == 0) throw Error(ErrorKind::BadConfig, "filter count must be >= 1");
  return {conv_out_extent(in_w, geom.extent, geom.stride, geom.padding),
          conv_out_extent(in_h, geom.extent, geom.stride, geom.padding)};
}

Tensor reshape(const Tensor& t, const Shape& new_shape) {
  if (new_shape.count() != t.size())
    throw Error(ErrorKind::CountMismatch,
                "cannot reshape " + t.shape().str() + " to " + new_shape.str());
  return Tensor(new_shape, t.values());
}

Tensor flatten(const Tensor& t) { return Tensor(Shape{t.size()}, t.values()); }

}  // namespace bellcnn

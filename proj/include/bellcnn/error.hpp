#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bellcnn {

enum class ErrorKind {
  // tensor-core
  NonPositiveOutput,
  Indivisible,
  CountMismatch,
  BadShape,
  // nn-layers / model
  ShapeMismatch,
  BadConfig,
  BadInputSize,
  StaleCache,
  FrozenGraphImmutable,
  // optim-loss
  LengthMismatch,
  NotOneHot,
  // data-wrangle
  MissingColumn,
  BadValue,
  OutOfRange,
  BadMagic,
  TruncatedFile,
  BadDimensions,
  Empty,
  // transfer-head
  TrunkDimensionDrift,
  DegenerateLabels,
  DimensionMismatch,
  // model-freeze
  IoFailure,
  NonFiniteParameter,
  UnsupportedVersion,
  ChecksumMismatch,
  DescriptorBlobMismatch,
  // train-cli
  EmptyTrainSet,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bellcnn

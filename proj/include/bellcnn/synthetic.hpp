#pragma once

#include <cstdint>
#include <vector>

#include "bellcnn/random.hpp"
#include "bellcnn/tensor.hpp"
#include "bellcnn/transfer.hpp"

namespace bellcnn {

/// Axial-slice stand-in: an elliptical brain with two dark ventricles that are
/// small for label 0 and enlarged for label 1, plus jitter and noise. Pixels are
/// 8-bit so a PGM round trip is exact.
std::vector<std::uint8_t> synthetic_slice_pixels(std::size_t label, std::size_t width, std::size_t height, Rng& rng);

/// Same slice as a [height, width, 1] tensor scaled to [0, 1].
Tensor synthetic_slice(std::size_t label, std::size_t width, std::size_t height, Rng& rng);

/// Two isotropic unit-variance Gaussian clusters in d dimensions whose means sit
/// at -/+ separation/2 along the all-ones direction; labels alternate 0, 1, 0, ...
std::vector<LabeledFeatures> gaussian_clusters(std::size_t count, std::size_t dimension, double separation, Rng& rng);

}  // namespace bellcnn

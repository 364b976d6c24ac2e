#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "bellcnn/random.hpp"
#include "bellcnn/tensor.hpp"

namespace bellcnn {

enum class Mode { Train, Infer };

/// Weights are laid out [F, F, in_depth, K]; bias is [K].
struct ConvLayer {
  ConvGeometry geom;
  std::size_t in_depth = 1;
  Tensor weights;
  Tensor bias;

  static ConvLayer zeros(const ConvGeometry& geom, std::size_t in_depth);
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

struct PoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

/// Weights are laid out [in_units, out_units]; y = x^T W + b.
struct DenseLayer {
  std::size_t in_units = 1;
  std::size_t out_units = 1;
  Tensor weights;
  Tensor bias;

  static DenseLayer zeros(std::size_t in_units, std::size_t out_units);
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

/// keep_prob is the probability that a unit survives (0.8 keeps 80%).
struct DropoutLayer {
  double keep_prob = 0.8;
  Mode mode = Mode::Train;
};

struct LayerGradients {
  Tensor d_input;
  std::optional<Tensor> d_weights;
  std::optional<Tensor> d_bias;
};

struct ConvCache {
  ConvGeometry geom;
  Shape input_shape;
  Shape output_shape;
  std::vector<double> patches;  // [out_h * out_w, F * F * in_depth]
  std::vector<double> weights;  // copy of the filter bank used by forward
};

struct PoolCache {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;  // flat input index chosen for each output element
};

struct DenseCache {
  Tensor input;
  Tensor weights;
};

template <typename Cache>
struct Forward {
  Tensor y;
  Cache cache;
};

struct DropoutResult {
  Tensor y;
  Tensor mask;  // entries are 0 or 1/keep_prob
};

Forward<ConvCache> conv_forward(const Tensor& x, const ConvLayer& layer);
LayerGradients conv_backward(const Tensor& d_y, const ConvCache& cache);

Forward<PoolCache> maxpool_forward(const Tensor& x, const PoolLayer& layer);
LayerGradients maxpool_backward(const Tensor& d_y, const PoolCache& cache);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& d_y, const Tensor& x);

Forward<DenseCache> dense_forward(const Tensor& x, const DenseLayer& layer);
LayerGradients dense_backward(const Tensor& d_y, const DenseCache& cache);

DropoutResult dropout_forward(const Tensor& x, const DropoutLayer& layer, Rng& rng);
Tensor dropout_backward(const Tensor& d_y, const Tensor& mask);

/// Max-shifted softmax over all elements.
Tensor softmax(const Tensor& x);
/// Backward through softmax given its output y: d_x = y * (d_y - <d_y, y>).
Tensor softmax_backward(const Tensor& d_y, const Tensor& y);

}  // namespace bellcnn

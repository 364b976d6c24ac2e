#include "bellcnn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "bellcnn/error.hpp"

namespace bellcnn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

void require_same_shape(const Shape& got, const Shape& want, const char* what) {
  if (!(got == want))
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": expected " + want.str() + ", got " + got.str());
}

}  // namespace

ConvLayer ConvLayer::zeros(const ConvGeometry& geom, std::size_t in_depth) {
  return ConvLayer{geom, in_depth, Tensor(Shape{geom.extent, geom.extent, in_depth, geom.filters}),
                   Tensor(Shape{geom.filters})};
}

DenseLayer DenseLayer::zeros(std::size_t in_units, std::size_t out_units) {
  return DenseLayer{in_units, out_units, Tensor(Shape{in_units, out_units}), Tensor(Shape{out_units})};
}

Forward<ConvCache> conv_forward(const Tensor& x, const ConvLayer& layer) {
  const ConvGeometry& g = layer.geom;
  if (x.shape().rank() != 3 || x.shape()[2] != layer.in_depth)
    throw Error(ErrorKind::ShapeMismatch,
                "conv input " + x.shape().str() + " does not have depth " + std::to_string(layer.in_depth));
  require_same_shape(layer.weights.shape(), Shape{g.extent, g.extent, layer.in_depth, g.filters},
                     "conv weights");
  require_same_shape(layer.bias.shape(), Shape{g.filters}, "conv bias");

  const std::size_t in_h = x.shape()[0], in_w = x.shape()[1], depth = layer.in_depth;
  const SpatialExtent out = conv_out_dims(in_w, in_h, g);
  const std::size_t rows = out.height * out.width;
  const std::size_t cols = g.extent * g.extent * depth;

  ConvCache cache{g, x.shape(), Shape{out.height, out.width, g.filters}, std::vector<double>(rows * cols, 0.0),
                  layer.weights.values()};

  const double* src = x.data().data();
  for (std::size_t oy = 0; oy < out.height; ++oy) {
    for (std::size_t ox = 0; ox < out.width; ++ox) {
      double* row = cache.patches.data() + (oy * out.width + ox) * cols;
      for (std::size_t fy = 0; fy < g.extent; ++fy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + fy) - static_cast<std::ptrdiff_t>(g.padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t fx = 0; fx < g.extent; ++fx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + fx) - static_cast<std::ptrdiff_t>(g.padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          std::memcpy(row + (fy * g.extent + fx) * depth, src + (iy * in_w + ix) * depth, depth * sizeof(double));
        }
      }
    }
  }

  Tensor y(cache.output_shape);
  Eigen::Map<const RowMat> patches(cache.patches.data(), rows, cols);
  Eigen::Map<const RowMat> w(layer.weights.data().data(), cols, g.filters);
  Eigen::Map<const RowVec> b(layer.bias.data().data(), g.filters);
  Eigen::Map<RowMat> out_mat(y.data().data(), rows, g.filters);
  out_mat.noalias() = patches * w;
  out_mat.rowwise() += b;
  return {std::move(y), std::move(cache)};
}

LayerGradients conv_backward(const Tensor& d_y, const ConvCache& cache) {
  require_same_shape(d_y.shape(), cache.output_shape, "conv upstream gradient");
  const ConvGeometry& g = cache.geom;
  const std::size_t in_h = cache.input_shape[0], in_w = cache.input_shape[1], depth = cache.input_shape[2];
  const std::size_t out_h = cache.output_shape[0], out_w = cache.output_shape[1];
  const std::size_t rows = out_h * out_w;
  const std::size_t cols = g.extent * g.extent * depth;

  Eigen::Map<const RowMat> dy(d_y.data().data(), rows, g.filters);
  Eigen::Map<const RowMat> patches(cache.patches.data(), rows, cols);
  Eigen::Map<const RowMat> w(cache.weights.data(), cols, g.filters);

  Tensor d_w(Shape{g.extent, g.extent, depth, g.filters});
  Eigen::Map<RowMat>(d_w.data().data(), cols, g.filters).noalias() = patches.transpose() * dy;
  Tensor d_b(Shape{g.filters});
  Eigen::Map<RowVec>(d_b.data().data(), g.filters) = dy.colwise().sum();

  RowMat d_patches(rows, cols);
  d_patches.noalias() = dy * w.transpose();

  Tensor d_x(cache.input_shape);
  double* dst = d_x.data().data();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double* row = d_patches.data() + (oy * out_w + ox) * cols;
      for (std::size_t fy = 0; fy < g.extent; ++fy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + fy) - static_cast<std::ptrdiff_t>(g.padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t fx = 0; fx < g.extent; ++fx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + fx) - static_cast<std::ptrdiff_t>(g.padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          double* target = dst + (iy * in_w + ix) * depth;
          const double* from = row + (fy * g.extent + fx) * depth;
          for (std::size_t c = 0; c < depth; ++c) target[c] += from[c];
        }
      }
    }
  }
  return {std::move(d_x), std::move(d_w), std::move(d_b)};
}

Forward<PoolCache> maxpool_forward(const Tensor& x, const PoolLayer& layer) {
  if (layer.window == 0 || layer.stride == 0) throw Error(ErrorKind::BadConfig, "pool window and stride must be >= 1");
  if (x.shape().rank() != 3) throw Error(ErrorKind::ShapeMismatch, "pool input must be rank 3, got " + x.shape().str());
  const std::size_t in_h = x.shape()[0], in_w = x.shape()[1], depth = x.shape()[2];
  auto out_extent = [&](std::size_t in) {
    if (in < layer.window || (in - layer.window) % layer.stride != 0)
      throw Error(ErrorKind::ShapeMismatch, "pool " + std::to_string(layer.window) + "/" +
                                                std::to_string(layer.stride) + " does not tile input " +
                                                x.shape().str());
    return (in - layer.window) / layer.stride + 1;
  };
  const std::size_t out_h = out_extent(in_h), out_w = out_extent(in_w);

  PoolCache cache{x.shape(), Shape{out_h, out_w, depth}, std::vector<std::size_t>(out_h * out_w * depth)};
  Tensor y(cache.output_shape);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      for (std::size_t c = 0; c < depth; ++c) {
        std::size_t best = (oy * layer.stride * in_w + ox * layer.stride) * depth + c;
        double best_value = x[best];
        // Row-major scan with strict '>' keeps the lowest flat index on ties.
        for (std::size_t fy = 0; fy < layer.window; ++fy) {
          for (std::size_t fx = 0; fx < layer.window; ++fx) {
            const std::size_t idx = ((oy * layer.stride + fy) * in_w + ox * layer.stride + fx) * depth + c;
            if (x[idx] > best_value) {
              best_value = x[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = (oy * out_w + ox) * depth + c;
        y[o] = best_value;
        cache.argmax[o] = best;
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

LayerGradients maxpool_backward(const Tensor& d_y, const PoolCache& cache) {
  require_same_shape(d_y.shape(), cache.output_shape, "pool upstream gradient");
  Tensor d_x(cache.input_shape);
  for (std::size_t o = 0; o < d_y.size(); ++o) d_x[cache.argmax[o]] += d_y[o];
  return {std::move(d_x), std::nullopt, std::nullopt};
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& d_y, const Tensor& x) {
  require_same_shape(d_y.shape(), x.shape(), "relu upstream gradient");
  Tensor d_x(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) d_x[i] = x[i] > 0.0 ? d_y[i] : 0.0;
  return d_x;
}

Forward<DenseCache> dense_forward(const Tensor& x, const DenseLayer& layer) {
  if (x.size() != layer.in_units)
    throw Error(ErrorKind::ShapeMismatch, "dense input has " + std::to_string(x.size()) + " units, expected " +
                                              std::to_string(layer.in_units));
  require_same_shape(layer.weights.shape(), Shape{layer.in_units, layer.out_units}, "dense weights");
  require_same_shape(layer.bias.shape(), Shape{layer.out_units}, "dense bias");

  Tensor y(Shape{layer.out_units});
  Eigen::Map<const RowVec> in(x.data().data(), layer.in_units);
  Eigen::Map<const RowMat> w(layer.weights.data().data(), layer.in_units, layer.out_units);
  Eigen::Map<const RowVec> b(layer.bias.data().data(), layer.out_units);
  Eigen::Map<RowVec>(y.data().data(), layer.out_units).noalias() = in * w + b;
  return {std::move(y), DenseCache{flatten(x), layer.weights}};
}

LayerGradients dense_backward(const Tensor& d_y, const DenseCache& cache) {
  const std::size_t in_units = cache.weights.shape()[0], out_units = cache.weights.shape()[1];
  require_same_shape(d_y.shape(), Shape{out_units}, "dense upstream gradient");

  Eigen::Map<const RowVec> dy(d_y.data().data(), out_units);
  Eigen::Map<const RowVec> x(cache.input.data().data(), in_units);
  Eigen::Map<const RowMat> w(cache.weights.data().data(), in_units, out_units);

  Tensor d_w(cache.weights.shape());
  Eigen::Map<RowMat>(d_w.data().data(), in_units, out_units).noalias() = x.transpose() * dy;
  Tensor d_x(Shape{in_units});
  Eigen::Map<RowVec>(d_x.data().data(), in_units).noalias() = dy * w.transpose();
  return {std::move(d_x), std::move(d_w), d_y};
}

DropoutResult dropout_forward(const Tensor& x, const DropoutLayer& layer, Rng& rng) {
  if (!(layer.keep_prob > 0.0 && layer.keep_prob <= 1.0))
    throw Error(ErrorKind::BadConfig, "keep_prob must lie in (0, 1]");
  if (layer.mode == Mode::Infer) return {x, Tensor(x.shape(), 1.0)};

  const double scale = 1.0 / layer.keep_prob;
  DropoutResult out{Tensor(x.shape()), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = uniform01(rng) < layer.keep_prob ? scale : 0.0;
    out.mask[i] = m;
    out.y[i] = x[i] * m;
  }
  return out;
}

Tensor dropout_backward(const Tensor& d_y, const Tensor& mask) {
  require_same_shape(d_y.shape(), mask.shape(), "dropout upstream gradient");
  Tensor d_x(d_y.shape());
  for (std::size_t i = 0; i < d_y.size(); ++i) d_x[i] = d_y[i] * mask[i];
  return d_x;
}

Tensor softmax(const Tensor& x) {
  const double peak = *std::max_element(x.data().begin(), x.data().end());
  Tensor y(x.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - peak);
    total += y[i];
  }
  for (double& v : y.data()) v /= total;
  return y;
}

Tensor softmax_backward(const Tensor& d_y, const Tensor& y) {
  require_same_shape(d_y.shape(), y.shape(), "softmax upstream gradient");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += d_y[i] * y[i];
  Tensor d_x(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) d_x[i] = y[i] * (d_y[i] - dot);
  return d_x;
}

}  // namespace bellcnn

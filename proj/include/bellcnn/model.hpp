#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bellcnn/layers.hpp"
#include "bellcnn/random.hpp"
#include "bellcnn/tensor.hpp"

namespace bellcnn {

enum class Activation { None, Relu, Softmax };

std::string_view to_string(Activation act) noexcept;
Activation parse_activation(std::string_view name);

struct FlattenLayer {};

/// One node of the graph: an operation, its activation, and the shapes it maps between.
struct GraphLayer {
  std::variant<ConvLayer, PoolLayer, FlattenLayer, DenseLayer, DropoutLayer> op;
  Activation act = Activation::None;
  Shape in_shape;
  Shape out_shape;

  std::string_view kind_name() const noexcept;
  std::size_t parameter_count() const noexcept;
};

/// Arithmetic regime of a graph. Storage32 rounds weights and every layer
/// output to binary32, which is how thawed graphs run.
enum class Precision { Full64, Storage32 };

/// Ordered layer stack. The final layer is always a Dense layer with Softmax
/// activation whose pre-activation values are the logits.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::vector<GraphLayer> layers, std::uint64_t seed);
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const std::vector<GraphLayer>& layers() const noexcept { return layers_; }
  const Shape& input_shape() const { return layers_.front().in_shape; }
  std::size_t num_classes() const { return layers_.back().out_shape.count(); }

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode);
  std::uint64_t seed() const noexcept { return seed_; }
  Precision precision() const noexcept { return precision_; }
  bool immutable() const noexcept { return immutable_; }
  std::uint64_t version() const noexcept { return version_; }

  /// Weight and bias tensors in graph order (weights before bias per layer).
  std::vector<const Tensor*> parameters() const;
  /// Mutable access; invalidates any outstanding forward caches.
  std::vector<Tensor*> mutable_parameters();
  std::size_t parameter_count() const;

  /// Re-check that consecutive shapes compose and parameter tensors match.
  void validate() const;

  /// Graph as restored from a frozen container: Infer mode, binary32, no backward.
  void mark_thawed();
  friend ModelGraph at_storage_precision(const ModelGraph& g);

 private:
  void touch();

  std::vector<GraphLayer> layers_;
  Mode mode_ = Mode::Train;
  std::uint64_t seed_ = 0;
  Precision precision_ = Precision::Full64;
  bool immutable_ = false;
  std::uint64_t version_ = 0;
};

/// Copy of g with every weight rounded to binary32 and Storage32 arithmetic.
ModelGraph at_storage_precision(const ModelGraph& g);

struct BellConfig {
  std::size_t input_w = 64;
  std::size_t input_h = 64;
  std::size_t input_depth = 1;
  std::size_t kernel_extent = 5;
  std::vector<std::size_t> conv_filters{32, 64, 128, 64, 32};
  std::size_t fc_units = 1024;
  double keep_prob = 0.8;
  std::size_t num_classes = 2;
  Activation fc_activation = Activation::Softmax;
  std::uint64_t seed = 0;
};

/// [Conv(SAME)+ReLU, MaxPool 2/2] per filter count, Flatten, Dense(fc)+act, Dropout, Dense(classes)+SoftMax.
/// Weights ~ U(-1, 1)/sqrt(fan_in) from cfg.seed; biases zero.
ModelGraph build_bellcnn(const BellConfig& cfg);

/// Closed-form parameter total for a configuration.
std::size_t bellcnn_parameter_count(const BellConfig& cfg);

struct LayerCache {
  std::variant<std::monostate, ConvCache, PoolCache, DenseCache, Tensor> op;  // Tensor = dropout mask
  Tensor pre;  // before activation
  Tensor out;  // after activation
};

struct ForwardPass {
  Tensor logits;
  Tensor probs;
  std::vector<LayerCache> caches;
  Mode mode = Mode::Infer;
  std::uint64_t graph_version = 0;
};

/// rng drives dropout masks in Train mode and is untouched in Infer mode.
ForwardPass forward(const ModelGraph& g, const Tensor& x, Rng& rng);

/// Runs inference semantics (dropout identity) regardless of the graph's mode.
ForwardPass infer_forward(const ModelGraph& g, const Tensor& x);

/// Output of the first layer_count layers (activation applied) in inference semantics.
Tensor infer_prefix(const ModelGraph& g, const Tensor& x, std::size_t layer_count);

struct GradientSet {
  std::vector<Tensor> grads;  // same order as ModelGraph::parameters()
  double loss = 0.0;
  Tensor d_logits;
};

/// Reverse pass for the fused softmax + cross-entropy loss against a one-hot target.
GradientSet backward(const ModelGraph& g, const ForwardPass& pass, const Tensor& target);

struct Prediction {
  std::size_t class_index = 0;
  Tensor scores;
};

/// Lowest index wins ties.
std::size_t argmax(const Tensor& t);

Prediction predict(const ModelGraph& g, const Tensor& x);

}  // namespace bellcnn

#include "bellcnn/model.hpp"

#include <atomic>
#include <cmath>

#include "bellcnn/error.hpp"
#include "bellcnn/optim.hpp"

namespace bellcnn {
namespace {

std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

void round_to_binary32(Tensor& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

Tensor apply_activation(Activation act, const Tensor& pre) {
  switch (act) {
    case Activation::Relu: return relu(pre);
    case Activation::Softmax: return softmax(pre);
    case Activation::None: break;
  }
  return pre;
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

ForwardPass run_forward(const ModelGraph& g, const Tensor& x, Rng* rng, Mode mode, std::size_t limit) {
  if (!(x.shape() == g.input_shape()))
    throw Error(ErrorKind::ShapeMismatch,
                "model expects input " + g.input_shape().str() + ", got " + x.shape().str());
  const bool round = g.precision() == Precision::Storage32;
  const auto& layers = g.layers();

  ForwardPass pass;
  pass.mode = mode;
  pass.graph_version = g.version();
  pass.caches.resize(limit);

  Tensor current = x;
  if (round) round_to_binary32(current);
  for (std::size_t i = 0; i < limit; ++i) {
    const GraphLayer& layer = layers[i];
    LayerCache& cache = pass.caches[i];
    std::visit(Overloaded{
                   [&](const ConvLayer& op) {
                     auto f = conv_forward(current, op);
                     cache.pre = std::move(f.y);
                     cache.op = std::move(f.cache);
                   },
                   [&](const PoolLayer& op) {
                     auto f = maxpool_forward(current, op);
                     cache.pre = std::move(f.y);
                     cache.op = std::move(f.cache);
                   },
                   [&](const FlattenLayer&) { cache.pre = flatten(current); },
                   [&](const DenseLayer& op) {
                     auto f = dense_forward(current, op);
                     cache.pre = std::move(f.y);
                     cache.op = std::move(f.cache);
                   },
                   [&](const DropoutLayer& op) {
                     if (mode == Mode::Train) {
                       DropoutLayer train = op;
                       train.mode = Mode::Train;
                       auto r = dropout_forward(current, train, *rng);
                       cache.pre = std::move(r.y);
                       cache.op = std::move(r.mask);
                     } else {
                       cache.pre = current;
                     }
                   },
               },
               layer.op);
    if (round) round_to_binary32(cache.pre);

    if (i + 1 == layers.size()) {
      pass.logits = cache.pre;
      pass.probs = softmax(cache.pre);
      if (round) round_to_binary32(pass.probs);
      cache.out = pass.probs;
    } else {
      cache.out = apply_activation(layer.act, cache.pre);
      if (round) round_to_binary32(cache.out);
      current = cache.out;
    }
  }
  if (limit < layers.size()) pass.logits = std::move(current);
  return pass;
}

}  // namespace

std::string_view to_string(Activation act) noexcept {
  switch (act) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Softmax: return "softmax";
  }
  return "none";
}

Activation parse_activation(std::string_view name) {
  if (name == "none") return Activation::None;
  if (name == "relu") return Activation::Relu;
  if (name == "softmax") return Activation::Softmax;
  throw Error(ErrorKind::BadConfig, "unknown activation '" + std::string(name) + "'");
}

std::string_view GraphLayer::kind_name() const noexcept {
  return std::visit(Overloaded{
                        [](const ConvLayer&) { return std::string_view("conv"); },
                        [](const PoolLayer&) { return std::string_view("pool"); },
                        [](const FlattenLayer&) { return std::string_view("flatten"); },
                        [](const DenseLayer&) { return std::string_view("dense"); },
                        [](const DropoutLayer&) { return std::string_view("dropout"); },
                    },
                    op);
}

std::size_t GraphLayer::parameter_count() const noexcept {
  if (auto* c = std::get_if<ConvLayer>(&op)) return c->parameter_count();
  if (auto* d = std::get_if<DenseLayer>(&op)) return d->parameter_count();
  return 0;
}

ModelGraph::ModelGraph(std::vector<GraphLayer> layers, std::uint64_t seed)
    : layers_(std::move(layers)), seed_(seed), version_(next_version()) {
  validate();
}

ModelGraph::ModelGraph(const ModelGraph& other)
    : layers_(other.layers_),
      mode_(other.mode_),
      seed_(other.seed_),
      precision_(other.precision_),
      immutable_(other.immutable_),
      version_(next_version()) {}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    layers_ = other.layers_;
    mode_ = other.mode_;
    seed_ = other.seed_;
    precision_ = other.precision_;
    immutable_ = other.immutable_;
    version_ = next_version();
  }
  return *this;
}

void ModelGraph::touch() { version_ = next_version(); }

void ModelGraph::set_mode(Mode mode) {
  if (immutable_ && mode == Mode::Train)
    throw Error(ErrorKind::FrozenGraphImmutable, "thawed graphs are inference-only");
  mode_ = mode;
  for (auto& layer : layers_)
    if (auto* d = std::get_if<DropoutLayer>(&layer.op)) d->mode = mode;
}

std::vector<const Tensor*> ModelGraph::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::vector<Tensor*> ModelGraph::mutable_parameters() {
  if (immutable_) throw Error(ErrorKind::FrozenGraphImmutable, "thawed graphs cannot be modified");
  touch();
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      out.push_back(&d->weights);
      out.push_back(&d->bias);
    }
  }
  return out;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) total += layer.parameter_count();
  return total;
}

void ModelGraph::validate() const {
  if (layers_.empty()) throw Error(ErrorKind::BadConfig, "graph has no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const GraphLayer& layer = layers_[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(layer.kind_name()) + ")";
    if (i > 0 && !(layer.in_shape == layers_[i - 1].out_shape))
      throw Error(ErrorKind::ShapeMismatch, where + " input " + layer.in_shape.str() +
                                                " does not match previous output " + layers_[i - 1].out_shape.str());
    std::visit(Overloaded{
                   [&](const ConvLayer& c) {
                     if (layer.in_shape.rank() != 3 || layer.in_shape[2] != c.in_depth)
                       throw Error(ErrorKind::ShapeMismatch, where + " depth mismatch");
                     const SpatialExtent out = conv_out_dims(layer.in_shape[1], layer.in_shape[0], c.geom);
                     if (!(layer.out_shape == Shape{out.height, out.width, c.geom.filters}))
                       throw Error(ErrorKind::ShapeMismatch, where + " output shape disagrees with geometry");
                     if (!(c.weights.shape() == Shape{c.geom.extent, c.geom.extent, c.in_depth, c.geom.filters}) ||
                         !(c.bias.shape() == Shape{c.geom.filters}))
                       throw Error(ErrorKind::ShapeMismatch, where + " parameter shapes disagree with geometry");
                   },
                   [&](const PoolLayer& p) {
                     if (layer.in_shape.rank() != 3 || p.window == 0 || p.stride == 0)
                       throw Error(ErrorKind::ShapeMismatch, where + " needs rank-3 input");
                     auto extent = [&](std::size_t in) {
                       if (in < p.window || (in - p.window) % p.stride != 0)
                         throw Error(ErrorKind::ShapeMismatch, where + " window does not tile input");
                       return (in - p.window) / p.stride + 1;
                     };
                     if (!(layer.out_shape == Shape{extent(layer.in_shape[0]), extent(layer.in_shape[1]), layer.in_shape[2]}))
                       throw Error(ErrorKind::ShapeMismatch, where + " output shape disagrees with window");
                   },
                   [&](const FlattenLayer&) {
                     if (!(layer.out_shape == Shape{layer.in_shape.count()}))
                       throw Error(ErrorKind::ShapeMismatch, where + " output must be rank 1");
                   },
                   [&](const DenseLayer& d) {
                     if (layer.in_shape.count() != d.in_units || !(layer.out_shape == Shape{d.out_units}))
                       throw Error(ErrorKind::ShapeMismatch, where + " units disagree with shapes");
                     if (!(d.weights.shape() == Shape{d.in_units, d.out_units}) || !(d.bias.shape() == Shape{d.out_units}))
                       throw Error(ErrorKind::ShapeMismatch, where + " parameter shapes disagree with units");
                   },
                   [&](const DropoutLayer& d) {
                     if (!(d.keep_prob > 0.0 && d.keep_prob <= 1.0))
                       throw Error(ErrorKind::BadConfig, where + " keep_prob out of range");
                     if (!(layer.out_shape == layer.in_shape))
                       throw Error(ErrorKind::ShapeMismatch, where + " must preserve shape");
                   },
               },
               layer.op);
  }
  const GraphLayer& last = layers_.back();
  if (!std::holds_alternative<DenseLayer>(last.op) || last.act != Activation::Softmax)
    throw Error(ErrorKind::BadConfig, "final layer must be dense with softmax output");
}

void ModelGraph::mark_thawed() {
  set_mode(Mode::Infer);
  precision_ = Precision::Storage32;
  immutable_ = true;
  touch();
}

ModelGraph at_storage_precision(const ModelGraph& g) {
  ModelGraph out = g;
  for (auto& layer : out.layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      round_to_binary32(c->weights);
      round_to_binary32(c->bias);
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      round_to_binary32(d->weights);
      round_to_binary32(d->bias);
    }
  }
  out.precision_ = Precision::Storage32;
  out.touch();
  return out;
}

namespace {

void check_config(const BellConfig& cfg) {
  if (cfg.input_w == 0 || cfg.input_h == 0 || cfg.input_depth == 0)
    throw Error(ErrorKind::BadConfig, "input extents must be >= 1");
  if (cfg.kernel_extent == 0 || cfg.kernel_extent % 2 == 0)
    throw Error(ErrorKind::BadConfig, "kernel extent must be odd for SAME padding");
  if (cfg.conv_filters.empty()) throw Error(ErrorKind::BadConfig, "need at least one conv stage");
  for (std::size_t k : cfg.conv_filters)
    if (k == 0) throw Error(ErrorKind::BadConfig, "filter counts must be >= 1");
  if (cfg.fc_units == 0) throw Error(ErrorKind::BadConfig, "fc_units must be >= 1");
  if (!(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0)) throw Error(ErrorKind::BadConfig, "keep_prob must lie in (0, 1]");
  if (cfg.num_classes != 2) throw Error(ErrorKind::BadConfig, "only binary heads are supported");
  if (cfg.fc_activation == Activation::None)
    throw Error(ErrorKind::BadConfig, "fc activation must be softmax or relu");
  if (cfg.conv_filters.size() >= 63) throw Error(ErrorKind::BadConfig, "too many conv stages");
  const std::size_t divisor = std::size_t{1} << cfg.conv_filters.size();
  if (cfg.input_w % divisor != 0 || cfg.input_h % divisor != 0)
    throw Error(ErrorKind::BadInputSize, "input " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                                             " must be divisible by " + std::to_string(divisor));
}

}  // namespace

std::size_t bellcnn_parameter_count(const BellConfig& cfg) {
  check_config(cfg);
  const std::size_t f = cfg.kernel_extent;
  std::size_t total = 0, depth = cfg.input_depth;
  for (std::size_t k : cfg.conv_filters) {
    total += f * f * depth * k + k;
    depth = k;
  }
  const std::size_t divisor = std::size_t{1} << cfg.conv_filters.size();
  const std::size_t flat = (cfg.input_w / divisor) * (cfg.input_h / divisor) * depth;
  total += flat * cfg.fc_units + cfg.fc_units;
  total += cfg.fc_units * cfg.num_classes + cfg.num_classes;
  return total;
}

ModelGraph build_bellcnn(const BellConfig& cfg) {
  check_config(cfg);
  Rng rng(cfg.seed);
  std::vector<GraphLayer> layers;
  Shape shape{cfg.input_h, cfg.input_w, cfg.input_depth};

  for (std::size_t filters : cfg.conv_filters) {
    const ConvGeometry geom{filters, cfg.kernel_extent, 1, (cfg.kernel_extent - 1) / 2};
    ConvLayer conv = ConvLayer::zeros(geom, shape[2]);
    fill_uniform(conv.weights, 1.0 / std::sqrt(static_cast<double>(geom.extent * geom.extent * shape[2])), rng);
    const SpatialExtent out = conv_out_dims(shape[1], shape[0], geom);
    Shape conv_out{out.height, out.width, filters};
    layers.push_back({std::move(conv), Activation::Relu, shape, conv_out});

    Shape pooled{conv_out[0] / 2, conv_out[1] / 2, filters};
    layers.push_back({PoolLayer{2, 2}, Activation::None, conv_out, pooled});
    shape = pooled;
  }

  const Shape flat{shape.count()};
  layers.push_back({FlattenLayer{}, Activation::None, shape, flat});

  DenseLayer hidden = DenseLayer::zeros(flat.count(), cfg.fc_units);
  fill_uniform(hidden.weights, 1.0 / std::sqrt(static_cast<double>(flat.count())), rng);
  layers.push_back({std::move(hidden), cfg.fc_activation, flat, Shape{cfg.fc_units}});
  layers.push_back({DropoutLayer{cfg.keep_prob, Mode::Train}, Activation::None, Shape{cfg.fc_units}, Shape{cfg.fc_units}});

  DenseLayer output = DenseLayer::zeros(cfg.fc_units, cfg.num_classes);
  fill_uniform(output.weights, 1.0 / std::sqrt(static_cast<double>(cfg.fc_units)), rng);
  layers.push_back({std::move(output), Activation::Softmax, Shape{cfg.fc_units}, Shape{cfg.num_classes}});

  return ModelGraph(std::move(layers), cfg.seed);
}

ForwardPass forward(const ModelGraph& g, const Tensor& x, Rng& rng) {
  return run_forward(g, x, &rng, g.mode(), g.layers().size());
}

ForwardPass infer_forward(const ModelGraph& g, const Tensor& x) {
  return run_forward(g, x, nullptr, Mode::Infer, g.layers().size());
}

Tensor infer_prefix(const ModelGraph& g, const Tensor& x, std::size_t layer_count) {
  if (layer_count == 0 || layer_count > g.layers().size())
    throw Error(ErrorKind::BadConfig, "prefix length out of range");
  if (layer_count == g.layers().size()) return infer_forward(g, x).probs;
  return std::move(run_forward(g, x, nullptr, Mode::Infer, layer_count).logits);
}

GradientSet backward(const ModelGraph& g, const ForwardPass& pass, const Tensor& target) {
  if (g.immutable()) throw Error(ErrorKind::FrozenGraphImmutable, "thawed graphs do not support backward");
  const auto& layers = g.layers();
  if (pass.mode != Mode::Train || pass.graph_version != g.version() || pass.caches.size() != layers.size())
    throw Error(ErrorKind::StaleCache, "forward caches do not belong to the current Train-mode graph state");

  auto sce = softmax_cross_entropy(pass.logits, target);
  GradientSet out;
  out.loss = sce.loss;
  out.d_logits = sce.d_logits;

  std::vector<std::vector<Tensor>> per_layer(layers.size());
  Tensor d = sce.d_logits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const GraphLayer& layer = layers[i];
    const LayerCache& cache = pass.caches[i];
    Tensor d_pre;
    if (i + 1 == layers.size()) {
      d_pre = std::move(d);
    } else {
      switch (layer.act) {
        case Activation::None: d_pre = std::move(d); break;
        case Activation::Relu: d_pre = relu_backward(d, cache.pre); break;
        case Activation::Softmax: d_pre = softmax_backward(d, cache.out); break;
      }
    }

    std::visit(Overloaded{
                   [&](const ConvLayer&) {
                     auto gr = conv_backward(d_pre, std::get<ConvCache>(cache.op));
                     per_layer[i] = {std::move(*gr.d_weights), std::move(*gr.d_bias)};
                     d = std::move(gr.d_input);
                   },
                   [&](const PoolLayer&) { d = maxpool_backward(d_pre, std::get<PoolCache>(cache.op)).d_input; },
                   [&](const FlattenLayer&) { d = reshape(d_pre, layer.in_shape); },
                   [&](const DenseLayer&) {
                     auto gr = dense_backward(d_pre, std::get<DenseCache>(cache.op));
                     per_layer[i] = {std::move(*gr.d_weights), std::move(*gr.d_bias)};
                     d = reshape(gr.d_input, layer.in_shape);
                   },
                   [&](const DropoutLayer&) { d = dropout_backward(d_pre, std::get<Tensor>(cache.op)); },
               },
               layer.op);
  }
  for (auto& grads : per_layer)
    for (auto& t : grads) out.grads.push_back(std::move(t));
  return out;
}

std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

Prediction predict(const ModelGraph& g, const Tensor& x) {
  ForwardPass pass = infer_forward(g, x);
  return {argmax(pass.logits), std::move(pass.probs)};
}

}  // namespace bellcnn

#include "bellcnn/transfer.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "bellcnn/digest.hpp"
#include "bellcnn/error.hpp"
#include "bellcnn/layers.hpp"

namespace bellcnn {
namespace {

void append_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

void append_text(std::vector<std::uint8_t>& out, const std::string& s) { append_bytes(out, s.data(), s.size()); }

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t flatten_prefix_length(const ModelGraph& g) {
  const auto& layers = g.layers();
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (std::holds_alternative<FlattenLayer>(layers[i].op)) return i + 1;
  throw Error(ErrorKind::BadConfig, "graph has no flatten layer to cut a trunk at");
}

std::string parameter_hash(const ModelGraph& g, std::size_t layer_count) {
  std::vector<std::uint8_t> bytes;
  const auto& layers = g.layers();
  for (std::size_t i = 0; i < layer_count && i < layers.size(); ++i) {
    const GraphLayer& layer = layers[i];
    append_text(bytes, std::string(layer.kind_name()) + ' ' + layer.in_shape.str() + ' ' + layer.out_shape.str() +
                           ' ' + std::string(to_string(layer.act)) + '\n');
    const Tensor* tensors[2] = {nullptr, nullptr};
    if (auto* c = std::get_if<ConvLayer>(&layer.op)) {
      tensors[0] = &c->weights, tensors[1] = &c->bias;
      append_text(bytes, "geom " + std::to_string(c->geom.stride) + ' ' + std::to_string(c->geom.padding) + '\n');
    } else if (auto* d = std::get_if<DenseLayer>(&layer.op)) {
      tensors[0] = &d->weights, tensors[1] = &d->bias;
    } else if (auto* p = std::get_if<PoolLayer>(&layer.op)) {
      append_text(bytes, "pool " + std::to_string(p->window) + ' ' + std::to_string(p->stride) + '\n');
    }
    for (const Tensor* t : tensors)
      if (t) append_bytes(bytes, t->data().data(), t->size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

std::string parameter_hash(const ModelGraph& g) { return parameter_hash(g, g.layers().size()); }

Trunk make_flatten_trunk(const ModelGraph& g) {
  const std::size_t prefix = flatten_prefix_length(g);
  return Trunk{parameter_hash(g, prefix).substr(0, 16),
               [&g, prefix](const Tensor& image) { return infer_prefix(g, image, prefix); }};
}

std::string content_key(std::span<const std::uint8_t> bytes) { return sha256_hex(bytes); }

std::string content_key(const Tensor& image) {
  std::vector<std::uint8_t> bytes;
  append_text(bytes, image.shape().str() + '\n');
  append_bytes(bytes, image.data().data(), image.size() * sizeof(double));
  return sha256_hex(bytes);
}

BottleneckCache::BottleneckCache(std::filesystem::path directory) : directory_(std::move(directory)) {
  std::error_code ec;
  std::filesystem::create_directories(*directory_, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create cache directory " + directory_->string());
}

std::string BottleneckCache::encode_entry(const BottleneckVector& vector) {
  std::string out = "BNK1 " + vector.trunk_id + ' ' + std::to_string(vector.features.size()) + '\n';
  for (double v : vector.features.data()) out += format_double(v) + '\n';
  return out;
}

BottleneckVector BottleneckCache::decode_entry(const std::string& text, const std::string& source_key) {
  std::istringstream in(text);
  std::string magic, trunk_id;
  std::size_t d = 0;
  if (!(in >> magic >> trunk_id >> d) || magic != "BNK1" || d == 0)
    throw Error(ErrorKind::BadMagic, "bottleneck entry " + source_key + " has a bad header");
  Tensor features(Shape{d});
  std::string token;
  for (std::size_t i = 0; i < d; ++i) {
    if (!(in >> token)) throw Error(ErrorKind::TruncatedFile, "bottleneck entry " + source_key + " is truncated");
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), features[i]);
    if (ec != std::errc() || ptr != token.data() + token.size())
      throw Error(ErrorKind::BadValue, "bottleneck entry " + source_key + " has a bad value");
  }
  return {std::move(features), source_key, trunk_id};
}

void BottleneckCache::check_dimension(const std::string& trunk_id, std::size_t d) {
  auto [it, inserted] = dims_.emplace(trunk_id, d);
  if (!inserted && it->second != d)
    throw Error(ErrorKind::TrunkDimensionDrift, "trunk " + trunk_id + " produced " + std::to_string(d) +
                                                    " features, previously " + std::to_string(it->second));
}

std::optional<Tensor> BottleneckCache::find(const std::string& source_key, const std::string& trunk_id) {
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find({source_key, trunk_id}); it != entries_.end()) return it->second;
  if (!directory_) return std::nullopt;

  const auto path = *directory_ / trunk_id / source_key;
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  BottleneckVector entry = decode_entry(text, source_key);
  if (entry.trunk_id != trunk_id) return std::nullopt;
  check_dimension(trunk_id, entry.features.size());
  entries_.emplace(std::pair{source_key, trunk_id}, entry.features);
  return entry.features;
}

void BottleneckCache::insert(const BottleneckVector& vector) {
  std::lock_guard lock(mutex_);
  check_dimension(vector.trunk_id, vector.features.size());
  entries_.insert_or_assign(std::pair{vector.source_key, vector.trunk_id}, vector.features);
  if (!directory_) return;

  const auto dir = *directory_ / vector.trunk_id;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  // Write-then-rename so concurrent writers of the same key never expose a partial file.
  const auto tmp = dir / (vector.source_key + ".tmp" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
  {
    const std::string text = encode_entry(vector);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / vector.source_key, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot publish cache entry " + vector.source_key);
}

std::size_t BottleneckCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<BottleneckVector> cache_bottlenecks(std::span<const BottleneckInput> images, const Trunk& trunk,
                                                BottleneckCache& store) {
  std::vector<BottleneckVector> out;
  out.reserve(images.size());
  for (const BottleneckInput& input : images) {
    if (auto hit = store.find(input.source_key, trunk.id)) {
      out.push_back({std::move(*hit), input.source_key, trunk.id});
      continue;
    }
    BottleneckVector fresh{flatten(trunk.extract(input.image)), input.source_key, trunk.id};
    store.insert(fresh);
    out.push_back(std::move(fresh));
  }
  return out;
}

HeadModel train_head(std::span<const LabeledFeatures> examples, const AdamHyper& hyper, std::uint64_t steps,
                     std::vector<double>* loss_trace) {
  if (examples.empty()) throw Error(ErrorKind::Empty, "no bottlenecks to train on");
  hyper.validate();
  const std::size_t d = examples.front().features.size();
  std::set<std::size_t> labels;
  for (const auto& e : examples) {
    if (e.features.size() != d) throw Error(ErrorKind::DimensionMismatch, "bottleneck widths differ");
    if (e.label > 1) throw Error(ErrorKind::OutOfRange, "head labels must be 0 or 1");
    labels.insert(e.label);
  }
  if (labels.size() < 2) throw Error(ErrorKind::DegenerateLabels, "head training needs both classes");

  const std::size_t classes = class_labels().size();
  HeadModel head{DenseLayer::zeros(d, classes), 0};
  AdamState w_state = AdamState::fresh(head.dense.weights.shape());
  AdamState b_state = AdamState::fresh(head.dense.bias.shape());
  const std::vector<Tensor> targets{Tensor(Shape{classes}, std::vector<double>{1.0, 0.0}),
                                    Tensor(Shape{classes}, std::vector<double>{0.0, 1.0})};
  const double inv_n = 1.0 / static_cast<double>(examples.size());

  for (std::uint64_t step = 0; step < steps; ++step) {
    Tensor d_w(head.dense.weights.shape()), d_b(head.dense.bias.shape());
    double loss = 0.0;
    for (const auto& e : examples) {
      auto f = dense_forward(e.features, head.dense);
      auto sce = softmax_cross_entropy(f.y, targets[e.label]);
      loss += sce.loss;
      auto g = dense_backward(sce.d_logits, f.cache);
      for (std::size_t i = 0; i < d_w.size(); ++i) d_w[i] += (*g.d_weights)[i] * inv_n;
      for (std::size_t i = 0; i < d_b.size(); ++i) d_b[i] += (*g.d_bias)[i] * inv_n;
    }
    if (loss_trace) loss_trace->push_back(loss * inv_n);
    adam_update(head.dense.weights, d_w, w_state, hyper);
    adam_update(head.dense.bias, d_b, b_state, hyper);
    ++head.trained_steps;
  }
  return head;
}

std::size_t head_predict(const HeadModel& head, const Tensor& features) {
  return argmax(dense_forward(features, head.dense).y);
}

std::vector<LabeledScore> labeled_scores(const Tensor& probs) {
  const auto& names = class_labels();
  if (probs.size() != names.size()) throw Error(ErrorKind::DimensionMismatch, "expected two class scores");
  std::vector<LabeledScore> out;
  for (std::size_t i = 0; i < probs.size(); ++i) out.push_back({names[i], probs[i]});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

std::vector<LabeledScore> infer_scores(const HeadModel& head, const BottleneckVector& bottleneck) {
  if (bottleneck.features.size() != head.dense.in_units)
    throw Error(ErrorKind::DimensionMismatch, "bottleneck has " + std::to_string(bottleneck.features.size()) +
                                                  " features, head expects " + std::to_string(head.dense.in_units));
  return labeled_scores(softmax(dense_forward(bottleneck.features, head.dense).y));
}

std::string format_scores(const std::vector<LabeledScore>& scores) {
  std::ostringstream out;
  for (const auto& s : scores) out << s.label << ' ' << s.score << '\n';
  return out.str();
}

ModelGraph attach_head(const ModelGraph& g, const HeadModel& head) {
  const std::size_t prefix = flatten_prefix_length(g);
  std::vector<GraphLayer> layers(g.layers().begin(), g.layers().begin() + static_cast<std::ptrdiff_t>(prefix));
  const Shape features = layers.back().out_shape;
  if (features.count() != head.dense.in_units)
    throw Error(ErrorKind::DimensionMismatch, "head input width does not match trunk output");
  layers.push_back({head.dense, Activation::Softmax, features, Shape{head.dense.out_units}});
  ModelGraph out(std::move(layers), g.seed());
  out.set_mode(Mode::Infer);
  return out;
}

}  // namespace bellcnn

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bellcnn/model.hpp"
#include "bellcnn/optim.hpp"

namespace bellcnn {

/// A frozen feature extractor: pure function image -> Tensor[d], named by trunk id.
struct Trunk {
  std::string id;
  std::function<Tensor(const Tensor&)> extract;
};

/// Number of leading layers of g up to and including its first Flatten.
std::size_t flatten_prefix_length(const ModelGraph& g);

/// SHA-256 over layer kinds, shapes and raw parameter bytes of the first `layer_count` layers.
std::string parameter_hash(const ModelGraph& g, std::size_t layer_count);
std::string parameter_hash(const ModelGraph& g);

/// Trunk running g in inference semantics up to its flatten layer. Its id is the
/// first 16 hex digits of the prefix parameter hash. g must outlive the trunk.
Trunk make_flatten_trunk(const ModelGraph& g);

struct BottleneckVector {
  Tensor features;
  std::string source_key;
  std::string trunk_id;
};

struct BottleneckInput {
  std::string source_key;  // content hash of the originating image
  Tensor image;
};

/// SHA-256 hex of raw file bytes, or of a tensor's in-memory values.
std::string content_key(std::span<const std::uint8_t> bytes);
std::string content_key(const Tensor& image);

/// Memoized bottlenecks keyed by (source_key, trunk_id). With a directory each
/// entry is persisted as <dir>/<trunk_id>/<source_key>:
///   "BNK1 <trunk_id> <d>\n" followed by d newline-separated decimal values.
class BottleneckCache {
 public:
  BottleneckCache() = default;
  explicit BottleneckCache(std::filesystem::path directory);

  std::optional<Tensor> find(const std::string& source_key, const std::string& trunk_id);
  void insert(const BottleneckVector& vector);
  std::size_t size() const;

  static std::string encode_entry(const BottleneckVector& vector);
  static BottleneckVector decode_entry(const std::string& text, const std::string& source_key);

 private:
  void check_dimension(const std::string& trunk_id, std::size_t d);

  std::optional<std::filesystem::path> directory_;
  std::map<std::pair<std::string, std::string>, Tensor> entries_;
  std::map<std::string, std::size_t> dims_;
  mutable std::mutex mutex_;
};

/// Runs the trunk at most once per (source_key, trunk id).
std::vector<BottleneckVector> cache_bottlenecks(std::span<const BottleneckInput> images, const Trunk& trunk,
                                                BottleneckCache& store);

struct LabeledFeatures {
  Tensor features;
  std::size_t label = 0;
};

/// Final classification layer d -> 2 trained on frozen bottlenecks.
struct HeadModel {
  DenseLayer dense;
  std::uint64_t trained_steps = 0;
};

/// Full-batch softmax + cross-entropy with Adam on the dense layer only; zero init.
/// loss_trace, when given, receives the pre-update loss of every step.
HeadModel train_head(std::span<const LabeledFeatures> examples, const AdamHyper& hyper, std::uint64_t steps,
                     std::vector<double>* loss_trace = nullptr);

struct LabeledScore {
  std::string label;
  double score = 0.0;
};

inline const std::vector<std::string>& class_labels() {
  static const std::vector<std::string> labels{"control", "alzheimer"};
  return labels;
}

std::size_t head_predict(const HeadModel& head, const Tensor& features);

/// Scores sorted descending; ties keep class-index order.
std::vector<LabeledScore> infer_scores(const HeadModel& head, const BottleneckVector& bottleneck);
std::vector<LabeledScore> labeled_scores(const Tensor& probs);

/// One `label score` line per class.
std::string format_scores(const std::vector<LabeledScore>& scores);

/// Trunk prefix of g followed by the head as the Softmax output layer. Infer mode.
ModelGraph attach_head(const ModelGraph& g, const HeadModel& head);

}  // namespace bellcnn

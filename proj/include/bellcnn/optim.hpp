#pragma once

#include <cstdint>

#include "bellcnn/tensor.hpp"

namespace bellcnn {

/// Floor applied to probabilities inside the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_i target_i * ln(clamp(pred_i, 1e-12, 1)). pred must sum to 1 and target be one-hot.
double cross_entropy(const Tensor& pred, const Tensor& target);

struct SoftmaxCrossEntropy {
  Tensor probs;
  double loss = 0.0;
  Tensor d_logits;  // probs - target
};

/// Fused softmax + categorical cross-entropy on raw logits.
SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, const Tensor& target);

struct AdamHyper {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;

  static AdamState fresh(const Shape& shape) { return {Tensor(shape), Tensor(shape), 0}; }
};

struct AdamResult {
  Tensor params;
  AdamState state;
};

/// One Adam update with bias correction; epsilon sits outside the square root.
AdamResult adam_step(const Tensor& params, const Tensor& grads, const AdamState& state, const AdamHyper& hyper);

/// In-place form used by the training loop; same arithmetic as adam_step.
void adam_update(Tensor& params, const Tensor& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace bellcnn

#include "bellcnn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "bellcnn/error.hpp"
#include "bellcnn/layers.hpp"

namespace bellcnn {
namespace {

void check_one_hot(const Tensor& target) {
  std::size_t ones = 0;
  for (double v : target.data()) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      throw Error(ErrorKind::NotOneHot, "target entries must be 0 or 1");
    }
  }
  if (ones != 1) throw Error(ErrorKind::NotOneHot, "target must contain exactly one 1");
}

}  // namespace

double cross_entropy(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size())
    throw Error(ErrorKind::LengthMismatch, "prediction and target lengths differ");
  check_one_hot(target);
  double total = 0.0;
  for (double v : pred.data()) total += v;
  if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorKind::BadValue, "prediction does not sum to 1");

  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(std::clamp(pred[i], kProbabilityFloor, 1.0));
  return loss;
}

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, const Tensor& target) {
  if (logits.size() != target.size())
    throw Error(ErrorKind::LengthMismatch, "logit and target lengths differ");
  check_one_hot(target);
  SoftmaxCrossEntropy out{softmax(logits), 0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] != 0.0) out.loss -= std::log(std::clamp(out.probs[i], kProbabilityFloor, 1.0));
    out.d_logits[i] = out.probs[i] - target[i];
  }
  return out;
}

void AdamHyper::validate() const {
  if (!(alpha > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw Error(ErrorKind::BadConfig, "Adam hyperparameters out of range");
}

void adam_update(Tensor& params, const Tensor& grads, AdamState& state, const AdamHyper& hyper) {
  if (!(params.shape() == grads.shape()) || !(params.shape() == state.m.shape()) ||
      !(params.shape() == state.v.shape()))
    throw Error(ErrorKind::ShapeMismatch, "Adam parameter, gradient and moment shapes must agree");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  double* p = params.data().data();
  double* m = state.m.data().data();
  double* v = state.v.data().data();
  const double* g = grads.data().data();
  for (std::size_t i = 0, n = params.size(); i < n; ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    p[i] -= hyper.alpha * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

AdamResult adam_step(const Tensor& params, const Tensor& grads, const AdamState& state, const AdamHyper& hyper) {
  AdamResult out{params, state};
  adam_update(out.params, grads, out.state, hyper);
  return out;
}

}  // namespace bellcnn

#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "ckgan/network.hpp"

namespace ckgan {

/// RMSProp accumulator state for one parameter group.
/// Per element: a <- beta a + (1 - beta) g^2;  p <- p - lr g / (sqrt(a) + eps).
struct RMSPropState {
  double beta = 0.99;
  double eps = 1e-8;
  std::map<std::string, Tensor> accum;

  static RMSPropState for_params(const ModelParams& params) {
    RMSPropState s;
    for (const auto& name : params.trainable)
      s.accum.emplace(name, Tensor::zeros(params.at(name).shape()));
    return s;
  }
  static RMSPropState for_tensor(const std::string& name, const Tensor& t) {
    RMSPropState s;
    s.accum.emplace(name, Tensor::zeros(t.shape()));
    return s;
  }
};

inline void rmsprop_apply(RMSPropState& state, const std::string& name, Tensor& param,
                          const Tensor& grad, double lr) {
  Tensor& a = state.accum.at(name);
  if (!a.same_shape(grad) || !param.same_shape(grad))
    throw std::invalid_argument("rmsprop: shape mismatch for '" + name + "'");
  double* pa = a.data();
  double* pp = param.data();
  const double* pg = grad.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[i] = state.beta * pa[i] + (1.0 - state.beta) * pg[i] * pg[i];
    pp[i] -= lr * pg[i] / (std::sqrt(pa[i]) + state.eps);
  }
}

/// Applies one RMSProp step to every trainable parameter. grads must cover all
/// of them (a zero tensor counts); prefix maps parameter names to grad keys.
inline void rmsprop_step(RMSPropState& state, ModelParams& params, const GradMap& grads,
                         double lr, const std::string& prefix = "") {
  for (const auto& name : params.trainable) {
    auto it = grads.find(prefix + name);
    if (it == grads.end())
      throw std::invalid_argument("rmsprop: missing gradient for '" + prefix + name + "'");
    rmsprop_apply(state, name, params.at(name), it->second, lr);
  }
}

}  // namespace ckgan

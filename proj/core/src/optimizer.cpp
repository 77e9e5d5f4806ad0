// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff {

void Adam::step(Params& params, const std::vector<ad::Var>& leaves) {
  if (params.tensors.size() != leaves.size()) {
    throw std::invalid_argument("Adam::step: parameter/leaf count mismatch");
  }
  if (state_.m.empty()) {
    state_.m.reserve(params.tensors.size());
    state_.v.reserve(params.tensors.size());
    for (const Tensor& t : params.tensors) {
      state_.m.push_back(Tensor::zeros(t.shape()));
      state_.v.push_back(Tensor::zeros(t.shape()));
    }
  }
  ++step_;
  state_.step = step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    const Tensor& grad = leaves[i]->grad;
    if (grad.empty()) continue;
    Tensor& p = params.tensors[i];
    check_same_shape(p, grad, "Adam::step");
    Tensor& m = state_.m[i];
    Tensor& v = state_.v[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double g = grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fsdiff/autodiff.hpp"
#include "fsdiff/denoiser.hpp"

namespace fsdiff {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created lazily from the
/// first step's parameter shapes and serialize into checkpoints.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  /// Applies one update. `leaves` must hold the gradients of `params`
  /// from a completed backward pass; parameters without gradients (never
  /// touched by the loss) are left unchanged.
  void step(Params& params, const std::vector<ad::Var>& leaves);

  struct State {
    int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
  };
  const State& state() const { return state_; }
  void set_state(State s) { state_ = std::move(s); step_ = state_.step; }

 private:
  AdamConfig cfg_;
  State state_;
  int64_t step_ = 0;
};

}  // namespace fsdiff

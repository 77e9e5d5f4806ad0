// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fsdiff/autodiff.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/schedule.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Network output for a batch: predicted noise and, when the model learns
/// the reverse variance, the per-element interpolation coefficient v in
/// [0, 1] that places log Sigma between log beta_hat (v = 0) and log beta
/// (v = 1).
struct DenoiserOutput {
  ad::Var eps_pred;
  ad::Var var_interp;  // null in fixed-variance mode

  bool has_variance() const { return var_interp != nullptr; }
};

/// Forward noising: x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, with a
/// per-sample step index.
ImageBatch q_sample(const ImageBatch& x0, std::span<const int> t, const ImageBatch& eps,
                    const NoiseSchedule& s);

struct PosteriorParams {
  ImageBatch mu_hat;
  std::vector<double> beta_hat;  // per sample
};

/// Exact Gaussian posterior q(x_{t-1} | x_t, x_0).
PosteriorParams posterior_params(const ImageBatch& x0, const ImageBatch& xt,
                                 std::span<const int> t, const NoiseSchedule& s);

/// x0 prediction from predicted noise; exact inverse of q_sample. Never
/// clamped here: losses stay smooth, the sampler clamps separately.
ImageBatch predict_x0_from_eps(const ImageBatch& xt, std::span<const int> t,
                               const ImageBatch& eps_pred, const NoiseSchedule& s);
ad::Var predict_x0_from_eps(const ImageBatch& xt, std::span<const int> t,
                            const ad::Var& eps_pred, const NoiseSchedule& s);

/// Reverse-mean parameterization mu = (x_t - beta_t/sqrt(1-abar_t) eps) / sqrt(alpha_t).
ImageBatch predict_mu_from_eps(const ImageBatch& xt, std::span<const int> t,
                               const ImageBatch& eps_pred, const NoiseSchedule& s);

/// Pluggable noise predictor used by the ancestral sampler.
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual bool learns_variance() const = 0;
  /// eps_out must be resized to x_t's shape by the implementation; var_out is
  /// non-null iff learns_variance() and receives the interpolation
  /// coefficients in [0, 1].
  virtual void predict(const Tensor& x_t, std::span<const int> t, Tensor& eps_out,
                       Tensor* var_out) const = 0;
};

enum class VarianceMode {
  model_default,   // learned if the model emits it, else fixed_beta_hat
  fixed_beta_hat,  // Sigma = beta_hat_t
  fixed_beta,      // Sigma = beta_t
  learned,         // Sigma = exp(v log beta_t + (1-v) log beta_hat_t)
};

struct SampleOptions {
  VarianceMode variance = VarianceMode::model_default;
  bool clamp_x0 = true;  // clamp x0 prediction to [-1, 1] inside the sampler
};

/// One ancestral step: draws x_{t-1} ~ N(mu_theta, Sigma_theta); the final
/// step (t = 1) returns the mean with no noise. Noise is drawn elementwise
/// in row-major order from `rng`.
ImageBatch p_sample_step(const EpsModel& model, const ImageBatch& xt, int t,
                         const NoiseSchedule& s, Rng& rng, const SampleOptions& opts = {});

/// Full ancestral sampling loop from x_T ~ N(0, I), one shared rng stream.
ImageBatch sample_loop(const EpsModel& model, const NoiseSchedule& s,
                       const std::vector<int64_t>& shape, Rng& rng,
                       const SampleOptions& opts = {});

/// Samples `count` images with independent per-image streams seeded
/// seed + index, so results do not depend on the batching used internally.
std::vector<Tensor> sample_images(const EpsModel& model, const NoiseSchedule& s, int64_t channels,
                                  int64_t height, int64_t width, int count, uint64_t seed,
                                  const SampleOptions& opts = {}, int batch_size = 16);

/// Reweighted noise-prediction objective: mean squared error over all
/// elements of the batch.
ad::Var loss_simple(const Tensor& eps, const ad::Var& eps_pred);
double loss_simple(const Tensor& eps, const Tensor& eps_pred);

/// Per-step variational-bound term, averaged per element in nats:
/// KL(q(x_{t-1}|x_t,x_0) || p_theta(x_{t-1}|x_t)) for t >= 2 and the
/// discretized Gaussian negative log-likelihood (bin width 2/255, open edge
/// bins) for t = 1. The reverse mean is treated as constant inside this
/// term: gradients flow only into the learned variance. Requires
/// learned-variance output.
ad::Var loss_vlb(const ImageBatch& x0, const ImageBatch& xt, std::span<const int> t,
                 const DenoiserOutput& model_out, const NoiseSchedule& s);

/// Prior term L_T = KL(q(x_T|x_0) || N(0, I)) per element; diagnostic only,
/// no trainable parameters.
double l_t_diagnostic(const ImageBatch& x0, const NoiseSchedule& s);

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Precomputed coefficients of a linear-beta forward noising process.
///
/// All arrays are indexed by diffusion step t in [1, T] via `index(t) = t-1`,
/// with the convention alpha_bar(0) = 1. The posterior coefficients express
/// the exact Gaussian reverse conditional
///   q(x_{t-1} | x_t, x_0) = N(mu_hat, beta_hat * I),
///   mu_hat = posterior_coef_x0[t] * x_0 + posterior_coef_xt[t] * x_t.
///
/// `posterior_beta_hat[1] = 0` exactly: the first reverse step is
/// deterministic given x_0. For the learned-variance interpolation,
/// `log_beta_hat_clipped` replaces the impossible log(0) at t = 1 with the
/// value at t = 2.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_beta_hat;
  std::vector<double> posterior_coef_x0;
  std::vector<double> posterior_coef_xt;
  std::vector<double> log_beta;
  std::vector<double> log_beta_hat_clipped;

  double beta_at(int t) const { return beta[static_cast<size_t>(t - 1)]; }
  double alpha_at(int t) const { return alpha[static_cast<size_t>(t - 1)]; }
  double alpha_bar_at(int t) const { return alpha_bar[static_cast<size_t>(t - 1)]; }
  /// alpha_bar(t-1) with alpha_bar(0) = 1.
  double alpha_bar_prev(int t) const {
    return t <= 1 ? 1.0 : alpha_bar[static_cast<size_t>(t - 2)];
  }
  double beta_hat_at(int t) const { return posterior_beta_hat[static_cast<size_t>(t - 1)]; }

  void check_t(int t) const;
  void check_t(std::span<const int> t) const;
};

/// Default beta endpoints of the linear schedule, scaled by 1000/T so that
/// the total amount of noise injected is roughly T-independent.
double default_beta_start(int T);
double default_beta_end(int T);

/// Builds the linear schedule; beta is interpolated endpoint-inclusive over
/// T steps (a single-step schedule uses beta_start and requires
/// beta_start == beta_end).
///
/// Throws std::invalid_argument if T < 1 or the endpoints leave (0, 1) or
/// beta_start > beta_end.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end);

/// Builds the schedule with the scaled default endpoints.
NoiseSchedule build_default_schedule(int T);

}  // namespace fsdiff

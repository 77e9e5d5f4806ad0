// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fsdiff {

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > T) {
    throw std::invalid_argument("diffusion step t=" + std::to_string(t) + " out of range [1, " +
                                std::to_string(T) + "]");
  }
}

void NoiseSchedule::check_t(std::span<const int> t) const {
  for (int ti : t) check_t(ti);
}

double default_beta_start(int T) { return 1e-4 * (1000.0 / T); }
double default_beta_end(int T) { return 0.02 * (1000.0 / T); }

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
  }

  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const size_t n = static_cast<size_t>(T);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.posterior_beta_hat.resize(n);
  s.posterior_coef_x0.resize(n);
  s.posterior_coef_xt.resize(n);
  s.log_beta.resize(n);
  s.log_beta_hat_clipped.resize(n);

  double cumprod = 1.0;
  for (size_t i = 0; i < n; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    cumprod *= s.alpha[i];
    s.alpha_bar[i] = cumprod;
  }
  for (size_t i = 0; i < n; ++i) {
    const double abar = s.alpha_bar[i];
    const double abar_prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
    s.posterior_beta_hat[i] = (1.0 - abar_prev) / (1.0 - abar) * s.beta[i];
    s.posterior_coef_x0[i] = std::sqrt(abar_prev) * s.beta[i] / (1.0 - abar);
    s.posterior_coef_xt[i] = std::sqrt(s.alpha[i]) * (1.0 - abar_prev) / (1.0 - abar);
    s.log_beta[i] = std::log(s.beta[i]);
  }
  // beta_hat(1) = 0, so the log interpolation for learned variances uses the
  // t = 2 value at t = 1 (the sampler never adds noise at t = 1 anyway).
  s.log_beta_hat_clipped[0] = n > 1 ? std::log(s.posterior_beta_hat[1]) : s.log_beta[0];
  for (size_t i = 1; i < n; ++i) {
    s.log_beta_hat_clipped[i] = std::log(s.posterior_beta_hat[i]);
  }
  return s;
}

NoiseSchedule build_default_schedule(int T) {
  return build_schedule(T, default_beta_start(T), default_beta_end(T));
}

}  // namespace fsdiff

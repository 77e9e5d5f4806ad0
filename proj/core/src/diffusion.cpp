// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsdiff {

namespace {

void check_batch_t(const ImageBatch& x, std::span<const int> t, const NoiseSchedule& s,
                   const char* what) {
  check_image_batch(x, what);
  if (static_cast<int64_t>(t.size()) != x.dim(0)) {
    throw std::invalid_argument(std::string(what) + ": one timestep per sample required");
  }
  s.check_t(t);
}

}  // namespace

ImageBatch q_sample(const ImageBatch& x0, std::span<const int> t, const ImageBatch& eps,
                    const NoiseSchedule& s) {
  check_batch_t(x0, t, s, "q_sample");
  check_same_shape(x0, eps, "q_sample");
  const int64_t n = x0.dim(0), stride = x0.numel() / n;
  ImageBatch out(x0.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double abar = s.alpha_bar_at(t[static_cast<size_t>(i)]);
    const double c_sig = std::sqrt(abar), c_noise = std::sqrt(1.0 - abar);
    const double* xs = x0.data() + i * stride;
    const double* es = eps.data() + i * stride;
    double* o = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = c_sig * xs[j] + c_noise * es[j];
  }
  return out;
}

PosteriorParams posterior_params(const ImageBatch& x0, const ImageBatch& xt,
                                 std::span<const int> t, const NoiseSchedule& s) {
  check_batch_t(x0, t, s, "posterior_params");
  check_same_shape(x0, xt, "posterior_params");
  const int64_t n = x0.dim(0), stride = x0.numel() / n;
  PosteriorParams p;
  p.mu_hat = ImageBatch(x0.shape());
  p.beta_hat.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int ti = t[static_cast<size_t>(i)];
    const double c0 = s.posterior_coef_x0[static_cast<size_t>(ti - 1)];
    const double ct = s.posterior_coef_xt[static_cast<size_t>(ti - 1)];
    p.beta_hat[static_cast<size_t>(i)] = s.beta_hat_at(ti);
    const double* a = x0.data() + i * stride;
    const double* b = xt.data() + i * stride;
    double* o = p.mu_hat.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = c0 * a[j] + ct * b[j];
  }
  return p;
}

ImageBatch predict_x0_from_eps(const ImageBatch& xt, std::span<const int> t,
                               const ImageBatch& eps_pred, const NoiseSchedule& s) {
  check_batch_t(xt, t, s, "predict_x0_from_eps");
  check_same_shape(xt, eps_pred, "predict_x0_from_eps");
  const int64_t n = xt.dim(0), stride = xt.numel() / n;
  ImageBatch out(xt.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double abar = s.alpha_bar_at(t[static_cast<size_t>(i)]);
    const double inv = 1.0 / std::sqrt(abar);
    const double c = std::sqrt(1.0 - abar) * inv;
    const double* xs = xt.data() + i * stride;
    const double* es = eps_pred.data() + i * stride;
    double* o = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = inv * xs[j] - c * es[j];
  }
  return out;
}

ad::Var predict_x0_from_eps(const ImageBatch& xt, std::span<const int> t,
                            const ad::Var& eps_pred, const NoiseSchedule& s) {
  check_batch_t(xt, t, s, "predict_x0_from_eps");
  check_same_shape(xt, eps_pred->value, "predict_x0_from_eps");
  const int64_t n = xt.dim(0), stride = xt.numel() / n;
  Tensor scaled_xt(xt.shape());
  std::vector<double> noise_coef(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double abar = s.alpha_bar_at(t[static_cast<size_t>(i)]);
    const double inv = 1.0 / std::sqrt(abar);
    noise_coef[static_cast<size_t>(i)] = -std::sqrt(1.0 - abar) * inv;
    const double* xs = xt.data() + i * stride;
    double* o = scaled_xt.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = inv * xs[j];
  }
  return ad::add(ad::constant(std::move(scaled_xt)), ad::per_sample_scale(eps_pred, noise_coef));
}

ImageBatch predict_mu_from_eps(const ImageBatch& xt, std::span<const int> t,
                               const ImageBatch& eps_pred, const NoiseSchedule& s) {
  check_batch_t(xt, t, s, "predict_mu_from_eps");
  check_same_shape(xt, eps_pred, "predict_mu_from_eps");
  const int64_t n = xt.dim(0), stride = xt.numel() / n;
  ImageBatch out(xt.shape());
  for (int64_t i = 0; i < n; ++i) {
    const int ti = t[static_cast<size_t>(i)];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha_at(ti));
    const double c = s.beta_at(ti) / std::sqrt(1.0 - s.alpha_bar_at(ti));
    const double* xs = xt.data() + i * stride;
    const double* es = eps_pred.data() + i * stride;
    double* o = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = inv_sqrt_alpha * (xs[j] - c * es[j]);
  }
  return out;
}

namespace {

VarianceMode resolve_variance(const EpsModel& model, const SampleOptions& opts) {
  if (opts.variance != VarianceMode::model_default) {
    if (opts.variance == VarianceMode::learned && !model.learns_variance()) {
      throw std::invalid_argument("p_sample_step: learned variance requested from a fixed model");
    }
    return opts.variance;
  }
  return model.learns_variance() ? VarianceMode::learned : VarianceMode::fixed_beta_hat;
}

}  // namespace

ImageBatch p_sample_step(const EpsModel& model, const ImageBatch& xt, int t,
                         const NoiseSchedule& s, Rng& rng, const SampleOptions& opts) {
  check_image_batch(xt, "p_sample_step");
  s.check_t(t);
  const VarianceMode mode = resolve_variance(model, opts);

  const int64_t n = xt.dim(0), stride = xt.numel() / n;
  std::vector<int> tv(static_cast<size_t>(n), t);
  Tensor eps;
  Tensor v;
  model.predict(xt, tv, eps, mode == VarianceMode::learned ? &v : nullptr);
  check_same_shape(xt, eps, "p_sample_step: model output");

  ImageBatch x0 = predict_x0_from_eps(xt, tv, eps, s);
  if (opts.clamp_x0) {
    for (double& val : x0.values()) val = std::clamp(val, -1.0, 1.0);
  }
  PosteriorParams post = posterior_params(x0, xt, tv, s);
  ImageBatch out = std::move(post.mu_hat);
  if (t == 1) return out;  // deterministic final step

  const double log_beta = s.log_beta[static_cast<size_t>(t - 1)];
  const double log_beta_hat = s.log_beta_hat_clipped[static_cast<size_t>(t - 1)];
  const double fixed_sigma =
      mode == VarianceMode::fixed_beta ? std::sqrt(s.beta_at(t)) : std::sqrt(s.beta_hat_at(t));
  for (int64_t i = 0; i < n; ++i) {
    double* o = out.data() + i * stride;
    const double* vi = mode == VarianceMode::learned ? v.data() + i * stride : nullptr;
    for (int64_t j = 0; j < stride; ++j) {
      const double sigma =
          vi ? std::exp(0.5 * (vi[j] * log_beta + (1.0 - vi[j]) * log_beta_hat)) : fixed_sigma;
      o[j] += sigma * rng.normal();
    }
  }
  return out;
}

ImageBatch sample_loop(const EpsModel& model, const NoiseSchedule& s,
                       const std::vector<int64_t>& shape, Rng& rng, const SampleOptions& opts) {
  ImageBatch x = rng.normal_tensor(shape);
  for (int t = s.T; t >= 1; --t) x = p_sample_step(model, x, t, s, rng, opts);
  return x;
}

std::vector<Tensor> sample_images(const EpsModel& model, const NoiseSchedule& s, int64_t channels,
                                  int64_t height, int64_t width, int count, uint64_t seed,
                                  const SampleOptions& opts, int batch_size) {
  if (count < 0 || batch_size < 1) {
    throw std::invalid_argument("sample_images: bad count or batch size");
  }
  const VarianceMode mode = resolve_variance(model, opts);
  const int64_t stride = channels * height * width;
  std::vector<Tensor> images;
  images.reserve(static_cast<size_t>(count));

  for (int begin = 0; begin < count; begin += batch_size) {
    const int nb = std::min(batch_size, count - begin);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) {
      rngs.emplace_back(seed + static_cast<uint64_t>(begin + i));
    }
    ImageBatch x({nb, channels, height, width});
    for (int i = 0; i < nb; ++i) {
      for (int64_t j = 0; j < stride; ++j) x[i * stride + j] = rngs[static_cast<size_t>(i)].normal();
    }
    std::vector<int> tv(static_cast<size_t>(nb));
    Tensor eps, v;
    for (int t = s.T; t >= 1; --t) {
      std::fill(tv.begin(), tv.end(), t);
      model.predict(x, tv, eps, mode == VarianceMode::learned ? &v : nullptr);
      ImageBatch x0 = predict_x0_from_eps(x, tv, eps, s);
      if (opts.clamp_x0) {
        for (double& val : x0.values()) val = std::clamp(val, -1.0, 1.0);
      }
      PosteriorParams post = posterior_params(x0, x, tv, s);
      x = std::move(post.mu_hat);
      if (t == 1) break;
      const double log_beta = s.log_beta[static_cast<size_t>(t - 1)];
      const double log_beta_hat = s.log_beta_hat_clipped[static_cast<size_t>(t - 1)];
      const double fixed_sigma = mode == VarianceMode::fixed_beta ? std::sqrt(s.beta_at(t))
                                                                  : std::sqrt(s.beta_hat_at(t));
      for (int i = 0; i < nb; ++i) {
        double* o = x.data() + i * stride;
        const double* vi = mode == VarianceMode::learned ? v.data() + i * stride : nullptr;
        Rng& r = rngs[static_cast<size_t>(i)];
        for (int64_t j = 0; j < stride; ++j) {
          const double sigma =
              vi ? std::exp(0.5 * (vi[j] * log_beta + (1.0 - vi[j]) * log_beta_hat)) : fixed_sigma;
          o[j] += sigma * r.normal();
        }
      }
    }
    for (int i = 0; i < nb; ++i) {
      Tensor img({channels, height, width});
      std::copy_n(x.data() + i * stride, stride, img.data());
      images.push_back(std::move(img));
    }
  }
  return images;
}

ad::Var loss_simple(const Tensor& eps, const ad::Var& eps_pred) {
  check_same_shape(eps, eps_pred->value, "loss_simple");
  return ad::mse(ad::constant(eps), eps_pred);
}

double loss_simple(const Tensor& eps, const Tensor& eps_pred) {
  check_same_shape(eps, eps_pred, "loss_simple");
  double acc = 0.0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    const double d = eps[i] - eps_pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.numel());
}

ad::Var loss_vlb(const ImageBatch& x0, const ImageBatch& xt, std::span<const int> t,
                 const DenoiserOutput& model_out, const NoiseSchedule& s) {
  if (!model_out.has_variance()) {
    throw std::invalid_argument("loss_vlb: requires learned-variance model output");
  }
  check_batch_t(x0, t, s, "loss_vlb");
  check_same_shape(x0, xt, "loss_vlb");
  check_same_shape(x0, model_out.eps_pred->value, "loss_vlb: eps shape");
  check_same_shape(x0, model_out.var_interp->value, "loss_vlb: var shape");

  const int64_t n = x0.dim(0), stride = x0.numel() / n;

  // The reverse mean is a constant inside this term (stop-gradient), so the
  // VLB only trains the variance head.
  const ImageBatch mu_theta =
      predict_mu_from_eps(xt, t, ad::value(ad::detach(model_out.eps_pred)), s);
  const PosteriorParams post = posterior_params(x0, xt, t, s);

  // log Sigma = v log beta_t + (1 - v) log beta_hat_t, per sample.
  std::vector<double> scale(static_cast<size_t>(n)), shift(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const size_t ti = static_cast<size_t>(t[static_cast<size_t>(i)] - 1);
    scale[static_cast<size_t>(i)] = s.log_beta[ti] - s.log_beta_hat_clipped[ti];
    shift[static_cast<size_t>(i)] = s.log_beta_hat_clipped[ti];
  }
  ad::Var log_sigma2 = ad::per_sample_affine(model_out.var_interp, scale, shift);

  // KL branch (t >= 2):
  //   0.5 (log Sigma - log beta_hat + (beta_hat + (mu_hat - mu)^2) / Sigma - 1)
  // Constants for t = 1 rows are dummies; the final select never reads them.
  Tensor mask_t1(x0.shape());
  Tensor log_bh(x0.shape());
  Tensor num(x0.shape());  // beta_hat + (mu_hat - mu_theta)^2
  for (int64_t i = 0; i < n; ++i) {
    const int ti = t[static_cast<size_t>(i)];
    const bool first = ti == 1;
    const double bh = first ? 1.0 : s.beta_hat_at(ti);
    const double lbh = first ? 0.0 : std::log(bh);
    for (int64_t j = 0; j < stride; ++j) {
      const int64_t idx = i * stride + j;
      mask_t1[idx] = first ? 1.0 : 0.0;
      log_bh[idx] = lbh;
      const double d = first ? 0.0 : post.mu_hat[idx] - mu_theta[idx];
      num[idx] = bh + d * d;
    }
  }
  ad::Var kl = ad::mul_scalar(
      ad::add(ad::sub(log_sigma2, ad::constant(log_bh)),
              ad::add_scalar(ad::mul(ad::exp(ad::neg(log_sigma2)), ad::constant(num)), -1.0)),
      0.5);

  // Decoder branch (t = 1): discretized Gaussian NLL over bins of width
  // 2/255 with open-ended edge bins.
  constexpr double kBinHalf = 1.0 / 255.0;
  constexpr double kEdge = 1.0 - 1e-3;
  Tensor lo_arg(x0.shape()), hi_arg(x0.shape());
  Tensor mask_hi(x0.shape()), mask_lo(x0.shape());
  for (int64_t idx = 0; idx < x0.numel(); ++idx) {
    const double centered = x0[idx] - mu_theta[idx];
    lo_arg[idx] = centered - kBinHalf;
    hi_arg[idx] = centered + kBinHalf;
    mask_hi[idx] = x0[idx] > kEdge ? 1.0 : 0.0;
    mask_lo[idx] = x0[idx] < -kEdge ? 1.0 : 0.0;
  }
  ad::Var inv_sigma = ad::exp(ad::mul_scalar(log_sigma2, -0.5));
  ad::Var cdf_hi = ad::normal_cdf(ad::mul(ad::constant(hi_arg), inv_sigma));
  ad::Var cdf_lo = ad::normal_cdf(ad::mul(ad::constant(lo_arg), inv_sigma));
  ad::Var one = ad::constant(Tensor::full(x0.shape(), 1.0));
  ad::Var prob = ad::select(mask_hi, ad::sub(one, cdf_lo),
                            ad::select(mask_lo, cdf_hi, ad::sub(cdf_hi, cdf_lo)));
  ad::Var nll = ad::neg(ad::log(ad::clamp_min(prob, 1e-12)));

  return ad::mean(ad::select(mask_t1, nll, kl));
}

double l_t_diagnostic(const ImageBatch& x0, const NoiseSchedule& s) {
  check_image_batch(x0, "l_t_diagnostic");
  const double abar = s.alpha_bar_at(s.T);
  const double v = 1.0 - abar;
  const double log_v = std::log(v);
  double acc = 0.0;
  for (int64_t i = 0; i < x0.numel(); ++i) {
    const double m = std::sqrt(abar) * x0[i];
    acc += 0.5 * (v + m * m - 1.0 - log_v);
  }
  return acc / static_cast<double>(x0.numel());
}

}  // namespace fsdiff

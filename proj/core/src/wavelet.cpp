// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/wavelet.hpp"

#include <stdexcept>

namespace fsdiff {

namespace {

void check_even_dims(const Tensor& x, const char* what) {
  check_image_batch(x, what);
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw std::invalid_argument(std::string(what) + ": H and W must be even, got " +
                                x.shape_str());
  }
}

void check_bands(const FrequencyBands& b) {
  check_image_batch(b.ll, "haar bands");
  check_same_shape(b.ll, b.lh, "haar bands");
  check_same_shape(b.ll, b.hl, "haar bands");
  check_same_shape(b.ll, b.hh, "haar bands");
}

}  // namespace

FrequencyBands haar_decompose(const ImageBatch& x) {
  check_even_dims(x, "haar_decompose");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::vector<int64_t> half{n, c, h / 2, w / 2};
  FrequencyBands b{Tensor(half), Tensor(half), Tensor(half), Tensor(half)};
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < h / 2; ++oh)
        for (int64_t ow = 0; ow < w / 2; ++ow) {
          const double a = x.at(i, ch, 2 * oh, 2 * ow);
          const double bb = x.at(i, ch, 2 * oh, 2 * ow + 1);
          const double cc = x.at(i, ch, 2 * oh + 1, 2 * ow);
          const double d = x.at(i, ch, 2 * oh + 1, 2 * ow + 1);
          b.ll.at(i, ch, oh, ow) = 0.5 * (a + bb + cc + d);
          b.lh.at(i, ch, oh, ow) = 0.5 * (-a + bb - cc + d);
          b.hl.at(i, ch, oh, ow) = 0.5 * (-a - bb + cc + d);
          b.hh.at(i, ch, oh, ow) = 0.5 * (a - bb - cc + d);
        }
  return b;
}

ImageBatch haar_reconstruct(const FrequencyBands& b) {
  check_bands(b);
  const int64_t n = b.ll.dim(0), c = b.ll.dim(1), hh = b.ll.dim(2), hw = b.ll.dim(3);
  ImageBatch x({n, c, hh * 2, hw * 2});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < hh; ++oh)
        for (int64_t ow = 0; ow < hw; ++ow) {
          const double ll = b.ll.at(i, ch, oh, ow);
          const double lh = b.lh.at(i, ch, oh, ow);
          const double hl = b.hl.at(i, ch, oh, ow);
          const double hhv = b.hh.at(i, ch, oh, ow);
          x.at(i, ch, 2 * oh, 2 * ow) = 0.5 * (ll - lh - hl + hhv);
          x.at(i, ch, 2 * oh, 2 * ow + 1) = 0.5 * (ll + lh - hl - hhv);
          x.at(i, ch, 2 * oh + 1, 2 * ow) = 0.5 * (ll - lh + hl - hhv);
          x.at(i, ch, 2 * oh + 1, 2 * ow + 1) = 0.5 * (ll + lh + hl + hhv);
        }
  return x;
}

Tensor hf_sum(const FrequencyBands& b) {
  check_bands(b);
  Tensor out(b.lh.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = b.lh[i] + b.hl[i] + b.hh[i];
  return out;
}

ad::Var haar_hf(const ad::Var& x) {
  check_even_dims(x->value, "haar_hf");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  Tensor out({n, c, h / 2, w / 2});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < h / 2; ++oh)
        for (int64_t ow = 0; ow < w / 2; ++ow) {
          out.at(i, ch, oh, ow) = 0.5 * (-x->value.at(i, ch, 2 * oh, 2 * ow) -
                                         x->value.at(i, ch, 2 * oh, 2 * ow + 1) -
                                         x->value.at(i, ch, 2 * oh + 1, 2 * ow) +
                                         3.0 * x->value.at(i, ch, 2 * oh + 1, 2 * ow + 1));
        }
  return ad::make_op(std::move(out), {x}, [x, n, c, h, w](ad::Node& node) {
    Tensor gx(x->value.shape());
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oh = 0; oh < h / 2; ++oh)
          for (int64_t ow = 0; ow < w / 2; ++ow) {
            const double g = node.grad.at(i, ch, oh, ow);
            gx.at(i, ch, 2 * oh, 2 * ow) -= 0.5 * g;
            gx.at(i, ch, 2 * oh, 2 * ow + 1) -= 0.5 * g;
            gx.at(i, ch, 2 * oh + 1, 2 * ow) -= 0.5 * g;
            gx.at(i, ch, 2 * oh + 1, 2 * ow + 1) += 1.5 * g;
          }
    ad::accumulate_grad(x, gx);
  });
}

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/wavelet.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace fsdiff;

TEST(Haar, ConstantImage) {
  const double c = 0.37;
  const ImageBatch x = Tensor::full({1, 1, 4, 4}, c);
  const FrequencyBands b = haar_decompose(x);
  for (int64_t i = 0; i < b.ll.numel(); ++i) {
    EXPECT_NEAR(b.ll[i], 2.0 * c, 1e-15);
    EXPECT_NEAR(b.lh[i], 0.0, 1e-15);
    EXPECT_NEAR(b.hl[i], 0.0, 1e-15);
    EXPECT_NEAR(b.hh[i], 0.0, 1e-15);
  }
}

// Oracle: explicit 2x2 outer products of the L and H filter taps. This test
// pins the sign/orientation convention.
TEST(Haar, TwoByTwoBlockOracle) {
  ImageBatch x({1, 1, 2, 2});
  const double a = 0.9, b = -0.4, c = 0.2, d = 0.7;
  x.at(0, 0, 0, 0) = a;
  x.at(0, 0, 0, 1) = b;
  x.at(0, 0, 1, 0) = c;
  x.at(0, 0, 1, 1) = d;
  const FrequencyBands bands = haar_decompose(x);
  const oracle::Haar2x2 ref = oracle::haar_2x2(a, b, c, d);
  EXPECT_NEAR(bands.ll[0], ref.ll, 1e-15);
  EXPECT_NEAR(bands.lh[0], ref.lh, 1e-15);
  EXPECT_NEAR(bands.hl[0], ref.hl, 1e-15);
  EXPECT_NEAR(bands.hh[0], ref.hh, 1e-15);
  EXPECT_NEAR(bands.ll[0], (a + b + c + d) / 2.0, 1e-15);
}

TEST(Haar, EnergyConservation) {
  Rng rng(1);
  const ImageBatch x = rng.normal_tensor({2, 3, 8, 8});
  const FrequencyBands b = haar_decompose(x);
  double in = 0.0, out = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) in += x[i] * x[i];
  for (const Tensor* band : {&b.ll, &b.lh, &b.hl, &b.hh}) {
    for (int64_t i = 0; i < band->numel(); ++i) out += (*band)[i] * (*band)[i];
  }
  EXPECT_LT(std::abs(in - out) / in, 1e-12);
}

TEST(Haar, PerfectReconstruction) {
  Rng rng(2);
  const ImageBatch x = rng.normal_tensor({2, 1, 6, 10});
  const ImageBatch rec = haar_reconstruct(haar_decompose(x));
  double max_err = 0.0, ref = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    max_err = std::max(max_err, std::abs(rec[i] - x[i]));
    ref = std::max(ref, std::abs(x[i]));
  }
  EXPECT_LT(max_err / ref, 1e-12);
}

TEST(Haar, DecomposeOfReconstructIsIdentity) {
  Rng rng(3);
  FrequencyBands b{rng.normal_tensor({1, 1, 3, 3}), rng.normal_tensor({1, 1, 3, 3}),
                   rng.normal_tensor({1, 1, 3, 3}), rng.normal_tensor({1, 1, 3, 3})};
  const FrequencyBands b2 = haar_decompose(haar_reconstruct(b));
  for (int64_t i = 0; i < b.ll.numel(); ++i) {
    EXPECT_NEAR(b2.ll[i], b.ll[i], 1e-12);
    EXPECT_NEAR(b2.lh[i], b.lh[i], 1e-12);
    EXPECT_NEAR(b2.hl[i], b.hl[i], 1e-12);
    EXPECT_NEAR(b2.hh[i], b.hh[i], 1e-12);
  }
}

TEST(Haar, ZeroBandsGiveZeroImage) {
  FrequencyBands b{Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2}),
                   Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2})};
  const ImageBatch x = haar_reconstruct(b);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], 0.0);
}

TEST(Haar, Linearity) {
  Rng rng(4);
  const ImageBatch x = rng.normal_tensor({1, 2, 4, 4});
  const ImageBatch y = rng.normal_tensor({1, 2, 4, 4});
  const double a = 1.7, b = -0.6;
  ImageBatch combo(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) combo[i] = a * x[i] + b * y[i];
  const FrequencyBands bc = haar_decompose(combo);
  const FrequencyBands bx = haar_decompose(x);
  const FrequencyBands by = haar_decompose(y);
  for (int64_t i = 0; i < bc.ll.numel(); ++i) {
    EXPECT_NEAR(bc.ll[i], a * bx.ll[i] + b * by.ll[i], 1e-12);
    EXPECT_NEAR(bc.hh[i], a * bx.hh[i] + b * by.hh[i], 1e-12);
  }
}

TEST(Haar, RejectsOddDimensions) {
  Rng rng(5);
  EXPECT_THROW(haar_decompose(rng.normal_tensor({1, 1, 3, 4})), std::invalid_argument);
  EXPECT_THROW(haar_decompose(rng.normal_tensor({1, 1, 4, 5})), std::invalid_argument);
}

TEST(HfSum, ConstantAndArithmetic) {
  const ImageBatch x = Tensor::full({1, 1, 4, 4}, -0.8);
  EXPECT_EQ(hf_sum(haar_decompose(x)).numel(), 4);
  for (double v : hf_sum(haar_decompose(x)).values()) EXPECT_NEAR(v, 0.0, 1e-15);

  FrequencyBands b{Tensor::zeros({1, 1, 2, 2}), Tensor::full({1, 1, 2, 2}, 1.0),
                   Tensor::full({1, 1, 2, 2}, 2.0), Tensor::full({1, 1, 2, 2}, 3.0)};
  for (double v : hf_sum(b).values()) EXPECT_DOUBLE_EQ(v, 6.0);
}

// Oracle: direct 2x2 block arithmetic for a vertical edge (left half -1,
// right half +1): only blocks straddling the edge carry high-frequency mass.
TEST(HfSum, VerticalEdgeLocalized) {
  const int64_t size = 8;
  ImageBatch x({1, 1, size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t xx = 0; xx < size; ++xx) x.at(0, 0, y, xx) = xx < size / 2 ? -1.0 : 1.0;
  const Tensor hf = hf_sum(haar_decompose(x));
  // size/2 = 4, so the edge falls between block columns 1 and 2: all blocks
  // are fully inside one half and hf must vanish everywhere.
  for (double v : hf.values()) EXPECT_NEAR(v, 0.0, 1e-15);

  // Shift the edge by one pixel so blocks in column 1 straddle it.
  for (int64_t y = 0; y < size; ++y)
    for (int64_t xx = 0; xx < size; ++xx) x.at(0, 0, y, xx) = xx < size / 2 - 1 ? -1.0 : 1.0;
  const Tensor hf2 = hf_sum(haar_decompose(x));
  for (int64_t y = 0; y < size / 2; ++y) {
    for (int64_t bx = 0; bx < size / 2; ++bx) {
      const double expected = bx == 1 ? oracle::haar_2x2(-1, 1, -1, 1).lh +
                                            oracle::haar_2x2(-1, 1, -1, 1).hl +
                                            oracle::haar_2x2(-1, 1, -1, 1).hh
                                      : 0.0;
      EXPECT_NEAR(hf2.at(0, 0, y, bx), expected, 1e-15) << "block (" << y << "," << bx << ")";
    }
  }
}

TEST(HaarHf, MatchesPlainComposition) {
  Rng rng(6);
  const ImageBatch x = rng.normal_tensor({2, 2, 6, 6});
  const Tensor plain = hf_sum(haar_decompose(x));
  const ad::Var var = haar_hf(ad::constant(x));
  ASSERT_TRUE(plain.same_shape(var->value));
  for (int64_t i = 0; i < plain.numel(); ++i) EXPECT_DOUBLE_EQ(var->value[i], plain[i]);
}

// The transform is linear, so its JVP is the transform itself; central
// differences must agree to 1e-6 relative.
TEST(HaarHf, FiniteDifferenceJacobian) {
  Rng rng(7);
  const Tensor x = rng.normal_tensor({1, 1, 4, 4});
  const Tensor probe = rng.normal_tensor({1, 1, 2, 2});
  const ad::Var leaf = ad::leaf(x);
  ad::backward(ad::sum(ad::mul(haar_hf(leaf), ad::constant(probe))));

  const double h = 1e-6;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    auto eval = [&probe](const Tensor& in) {
      const Tensor hf = hf_sum(haar_decompose(in));
      double acc = 0.0;
      for (int64_t j = 0; j < hf.numel(); ++j) acc += hf[j] * probe[j];
      return acc;
    };
    const double fd = (eval(xp) - eval(xm)) / (2.0 * h);
    EXPECT_LT(oracle::rel_err(leaf->grad[i], fd), 1e-6) << "coord " << i;
  }
}

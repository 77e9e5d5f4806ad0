// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fsdiff/dataset.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/synthetic.hpp"
#include "oracles.hpp"

using namespace fsdiff;

namespace {

RandomProjectionBackend gray_backend(uint64_t seed = 17) {
  RandomProjectionConfig cfg;
  cfg.seed = seed;
  cfg.channels = 1;
  return RandomProjectionBackend(cfg);
}

std::vector<Tensor> toy_images(int count, uint64_t seed) {
  return make_synthetic(SyntheticStyle::kMixed, 1, 16, count, seed);
}

}  // namespace

TEST(PerceptualBackend, MetricAxioms) {
  const RandomProjectionBackend backend = gray_backend();
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = rng.normal_tensor({1, 16, 16});
    const Tensor b = rng.normal_tensor({1, 16, 16});
    EXPECT_EQ(backend.distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(backend.distance(a, b), backend.distance(b, a));
    EXPECT_GE(backend.distance(a, b), 0.0);
    EXPECT_GT(backend.distance(a, b), 0.0);
  }
}

TEST(PerceptualBackend, DeterministicPerSeed) {
  Rng rng(2);
  const Tensor a = rng.normal_tensor({1, 16, 16});
  const Tensor b = rng.normal_tensor({1, 16, 16});
  EXPECT_EQ(gray_backend(7).distance(a, b), gray_backend(7).distance(a, b));
  EXPECT_NE(gray_backend(7).distance(a, b), gray_backend(8).distance(a, b));
}

// Oracle: Monte-Carlo monotonicity; bigger perturbations should read as
// farther in at least 95% of trials.
TEST(PerceptualBackend, NoiseMonotonicity) {
  const RandomProjectionBackend backend = gray_backend();
  Rng rng(3);
  int ok = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    const Tensor base = synthetic_image(SyntheticStyle::kMixed, 1, 16, rng);
    Tensor small = base, large = base;
    for (int64_t j = 0; j < base.numel(); ++j) {
      const double n = rng.normal();
      small[j] = std::clamp(small[j] + 0.05 * n, -1.0, 1.0);
      large[j] = std::clamp(large[j] + 0.60 * n, -1.0, 1.0);
    }
    if (backend.distance(base, large) > backend.distance(base, small)) ++ok;
  }
  EXPECT_GE(ok, 95) << "monotonic in " << ok << "/" << trials << " trials";
}

TEST(NearestLpips, ZeroOnReplication) {
  const std::vector<Tensor> train = toy_images(5, 4);
  EXPECT_EQ(nearest_lpips(train, train, gray_backend()), 0.0);
}

// Oracle: exhaustive distance table on a small set.
TEST(NearestLpips, MatchesBruteForce) {
  const RandomProjectionBackend backend = gray_backend();
  const std::vector<Tensor> gen = toy_images(2, 5);
  const std::vector<Tensor> train = toy_images(3, 6);
  double expected = 0.0;
  for (const Tensor& g : gen) {
    double best = backend.distance(g, train[0]);
    for (size_t t = 1; t < train.size(); ++t) best = std::min(best, backend.distance(g, train[t]));
    expected += best;
  }
  expected /= static_cast<double>(gen.size());
  EXPECT_DOUBLE_EQ(nearest_lpips(gen, train, backend), expected);
}

// Min over a superset can only shrink.
TEST(NearestLpips, FlippedSupplementsNeverIncrease) {
  const RandomProjectionBackend backend = gray_backend();
  const std::vector<Tensor> gen = toy_images(6, 7);
  std::vector<Tensor> train = toy_images(4, 8);
  const double base = nearest_lpips(gen, train, backend);
  for (size_t i = 0, n = train.size(); i < n; ++i) train.push_back(hflip(train[i]));
  EXPECT_LE(nearest_lpips(gen, train, backend), base);
}

TEST(IntraLpips, ZeroOnReplication) {
  const std::vector<Tensor> train = toy_images(4, 9);
  std::vector<Tensor> gen;
  for (int copy = 0; copy < 3; ++copy) {
    for (const Tensor& t : train) gen.push_back(t);
  }
  const IntraLpipsResult r = intra_lpips(gen, train, gray_backend());
  EXPECT_EQ(r.mean, 0.0);
  EXPECT_EQ(r.std_dev, 0.0);
  EXPECT_TRUE(r.flagged_clusters.empty());
}

// Oracle: exhaustive pair enumeration in a single cluster.
TEST(IntraLpips, SingleClusterPairMean) {
  const RandomProjectionBackend backend = gray_backend();
  // one training image far from three generated variants of one pattern
  std::vector<Tensor> train{Tensor::full({1, 16, 16}, -0.9)};
  std::vector<Tensor> gen = toy_images(3, 10);
  const double expected = (backend.distance(gen[0], gen[1]) + backend.distance(gen[0], gen[2]) +
                           backend.distance(gen[1], gen[2])) /
                          3.0;
  const IntraLpipsResult r = intra_lpips(gen, train, backend);
  EXPECT_EQ(r.cluster_sizes[0], 3);
  EXPECT_NEAR(r.mean, expected, 1e-12);
  EXPECT_EQ(r.std_dev, 0.0);  // single cluster
}

TEST(IntraLpips, PermutationInvariantAndFlagsSmallClusters) {
  const RandomProjectionBackend backend = gray_backend();
  const std::vector<Tensor> train = toy_images(3, 11);
  std::vector<Tensor> gen = toy_images(7, 12);
  const IntraLpipsResult a = intra_lpips(gen, train, backend);
  std::reverse(gen.begin(), gen.end());
  const IntraLpipsResult b = intra_lpips(gen, train, backend);
  EXPECT_DOUBLE_EQ(a.mean, b.mean);
  EXPECT_DOUBLE_EQ(a.std_dev, b.std_dev);

  // empty + singleton clusters are flagged and contribute zero
  std::vector<Tensor> one_gen{gen[0]};
  const IntraLpipsResult r = intra_lpips(one_gen, train, backend);
  EXPECT_EQ(r.flagged_clusters.size(), train.size());
  EXPECT_EQ(r.mean, 0.0);
}

TEST(Frechet, IdenticalSetsNearZero) {
  Rng rng(13);
  Tensor feats({64, 4});
  rng.fill_normal(feats);
  EXPECT_NEAR(frechet_distance(feats, feats), 0.0, 1e-6);
}

// Oracle: closed-form 1-d Frechet (m1-m2)^2 + (s1-s2)^2 on sampled data.
TEST(Frechet, OneDimensionalClosedForm) {
  const double m1 = 0.3, s1 = 1.2, m2 = -0.5, s2 = 0.7;
  const int n = 10000;
  Rng rng(14);
  Tensor a({n, 1}), b({n, 1});
  for (int i = 0; i < n; ++i) {
    a[i] = m1 + s1 * rng.normal();
    b[i] = m2 + s2 * rng.normal();
  }
  const double expected = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
  EXPECT_NEAR(frechet_distance(a, b), expected, 0.05 * expected);
}

TEST(Frechet, TranslationAndRotationInvariance) {
  Rng rng(15);
  const int n = 200, d = 3;
  Tensor a({n, d}), b({n, d});
  rng.fill_normal(a);
  rng.fill_normal(b);
  for (int64_t i = 0; i < b.numel(); ++i) b[i] *= 1.4;
  const double base = frechet_distance(a, b);

  Tensor at = a, bt = b;
  const double shift[3] = {3.0, -1.0, 0.5};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      at[i * d + j] += shift[j];
      bt[i * d + j] += shift[j];
    }
  }
  EXPECT_NEAR(frechet_distance(at, bt), base, 1e-9);

  // rotation in the (0,1) plane
  const double c = std::cos(0.7), s = std::sin(0.7);
  Tensor ar = a, br = b;
  for (int i = 0; i < n; ++i) {
    ar[i * d] = c * a[i * d] - s * a[i * d + 1];
    ar[i * d + 1] = s * a[i * d] + c * a[i * d + 1];
    br[i * d] = c * b[i * d] - s * b[i * d + 1];
    br[i * d + 1] = s * b[i * d] + c * b[i * d + 1];
  }
  EXPECT_NEAR(frechet_distance(ar, br), base, 1e-7);
}

TEST(Frechet, Guards) {
  Rng rng(16);
  EXPECT_THROW(frechet_distance(rng.normal_tensor({4, 2}), rng.normal_tensor({4, 3})),
               std::invalid_argument);
  EXPECT_THROW(frechet_distance(rng.normal_tensor({1, 2}), rng.normal_tensor({4, 2})),
               std::invalid_argument);
}

TEST(Evaluate, SelfEvaluationReportAndJson) {
  const std::vector<Tensor> imgs = toy_images(6, 17);
  const RandomProjectionBackend backend = gray_backend();
  const EvalReport r = evaluate(imgs, imgs, backend);
  EXPECT_EQ(r.nearest_lpips, 0.0);
  EXPECT_EQ(r.intra_lpips_mean, 0.0);
  EXPECT_NEAR(r.frechet, 0.0, 1e-6);

  const std::string json = to_json(r);
  for (const char* key : {"nearest_lpips", "intra_lpips_mean", "intra_lpips_std", "frechet",
                          "cluster_sizes", "flagged_clusters", "backend"}) {
    EXPECT_NE(json.find(key), std::string::npos) << key;
  }
}

TEST(Evaluate, FlipAugmentNeverIncreasesNearest) {
  const std::vector<Tensor> gen = toy_images(5, 18);
  const std::vector<Tensor> train = toy_images(4, 19);
  const RandomProjectionBackend backend = gray_backend();
  const EvalReport plain = evaluate(gen, train, backend);
  EvalOptions opts;
  opts.flip_augment_training = true;
  const EvalReport flipped = evaluate(gen, train, backend, opts);
  EXPECT_LE(flipped.nearest_lpips, plain.nearest_lpips);
  EXPECT_EQ(flipped.cluster_sizes.size(), train.size() * 2);
}

TEST(DistanceTable, ShapeAndConsistency) {
  const std::vector<Tensor> gen = toy_images(3, 20);
  const std::vector<Tensor> train = toy_images(2, 21);
  const RandomProjectionBackend backend = gray_backend();
  const Tensor table = distance_table(gen, train, backend);
  ASSERT_EQ(table.shape(), (std::vector<int64_t>{3, 2}));
  EXPECT_DOUBLE_EQ(table[0], backend.distance(gen[0], train[0]));
  EXPECT_DOUBLE_EQ(table[5], backend.distance(gen[2], train[1]));
}

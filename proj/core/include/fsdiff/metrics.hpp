// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Deterministic perceptual distance: multi-scale features plus an
/// aggregator, identified by a seed and an architecture descriptor. The
/// default implementation below is a fixed-seed random projection; a
/// trained LPIPS-style network can be plugged in through this interface.
class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  /// Multi-scale feature maps of a (C, H, W) image.
  virtual std::vector<Tensor> features(const Tensor& image) const = 0;
  /// Aggregates two feature lists into a distance; `distance(a, b)` is
  /// exactly feature_distance(features(a), features(b)), so callers may
  /// cache features for repeated comparisons.
  virtual double feature_distance(const std::vector<Tensor>& fa,
                                  const std::vector<Tensor>& fb) const = 0;
  /// Non-negative, symmetric, zero on identical inputs.
  double distance(const Tensor& a, const Tensor& b) const {
    return feature_distance(features(a), features(b));
  }
  /// Pooled feature vector used for Frechet statistics.
  virtual std::vector<double> embedding(const Tensor& image) const = 0;
  virtual std::string descriptor() const = 0;
};

struct RandomProjectionConfig {
  uint64_t seed = 17;
  int64_t channels = 1;   // expected image channels
  int scales = 3;         // conv/pool pyramid depth
  int64_t base_features = 8;
};

/// Random multi-scale convolutional projection with per-position
/// unit-normalized features and averaged squared-L2 distances. Shares the
/// shape of an LPIPS evaluation without shipping trained weights, so only
/// identities, orderings and directional effects are comparable across
/// backends - never absolute values.
class RandomProjectionBackend final : public PerceptualBackend {
 public:
  explicit RandomProjectionBackend(const RandomProjectionConfig& cfg = {});

  std::vector<Tensor> features(const Tensor& image) const override;
  double feature_distance(const std::vector<Tensor>& fa,
                          const std::vector<Tensor>& fb) const override;
  std::vector<double> embedding(const Tensor& image) const override;
  std::string descriptor() const override;

 private:
  RandomProjectionConfig cfg_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// Nearest assignment of each generated sample to its closest training
/// sample (ties broken by lowest training index).
struct ClusterAssignment {
  std::vector<int> nearest;       // per generated sample
  std::vector<double> distance;   // distance to that training sample
};

/// Mean over generated samples of the minimum backend distance to any
/// training sample; zero iff every generated sample replicates one.
double nearest_lpips(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                     const PerceptualBackend& backend);

struct IntraLpipsResult {
  double mean = 0.0;
  double std_dev = 0.0;  // population std across clusters
  ClusterAssignment assignment;
  std::vector<int> cluster_sizes;      // one per training sample
  std::vector<int> flagged_clusters;   // clusters with fewer than 2 members
};

/// Assigns generated samples to nearest training samples, then averages the
/// within-cluster pairwise distances over all clusters (one per training
/// sample); clusters with fewer than two members contribute 0 and are
/// flagged.
IntraLpipsResult intra_lpips(const std::vector<Tensor>& generated,
                             const std::vector<Tensor>& training,
                             const PerceptualBackend& backend);

/// Frechet distance between Gaussian fits of two feature sets (rows =
/// samples): |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)). Covariances use
/// the sample estimator and 1e-6 diagonal regularization; the matrix square
/// root clips negative eigenvalues of the symmetrized product at zero.
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

/// Full generated x training distance table (rows = generated), for audits.
Tensor distance_table(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                      const PerceptualBackend& backend);

struct EvalOptions {
  bool flip_augment_training = false;  // add mirrored training samples
};

struct EvalReport {
  double nearest_lpips = 0.0;
  double intra_lpips_mean = 0.0;
  double intra_lpips_std = 0.0;
  double frechet = 0.0;
  std::vector<int> cluster_sizes;
  std::vector<int> flagged_clusters;
  std::string backend;
};

EvalReport evaluate(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                    const PerceptualBackend& backend, const EvalOptions& opts = {});

/// Stable-key JSON rendering of a report.
std::string to_json(const EvalReport& report);

}  // namespace fsdiff

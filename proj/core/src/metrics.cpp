// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/metrics.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fsdiff/autodiff.hpp"
#include "fsdiff/dataset.hpp"
#include "fsdiff/rng.hpp"

namespace fsdiff {

namespace {

// Channelwise unit normalization at every spatial position (in place).
void normalize_positions(Tensor& feat) {
  const int64_t c = feat.dim(0), hw = feat.dim(1) * feat.dim(2);
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double v = feat[ch * hw + p];
      s += v * v;
    }
    const double inv = 1.0 / std::sqrt(s + 1e-10);
    for (int64_t ch = 0; ch < c; ++ch) feat[ch * hw + p] *= inv;
  }
}

Tensor conv_relu(const Tensor& image, const Tensor& w, const Tensor& b) {
  // Reuses the stride-1 convolution; constants keep this a pure value path.
  ad::Var out = ad::conv2d(
      ad::constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)})),
      ad::constant(w), ad::constant(b));
  Tensor feat = out->value.reshaped({out->value.dim(1), out->value.dim(2), out->value.dim(3)});
  for (double& v : feat.values()) v = v > 0.0 ? v : 0.0;
  return feat;
}

Tensor pool2_if_possible(const Tensor& feat) {
  if (feat.dim(1) < 4 || feat.dim(2) < 4 || feat.dim(1) % 2 != 0 || feat.dim(2) % 2 != 0) {
    return feat;  // keep resolution when halving is not representable
  }
  ad::Var out = ad::avg_pool2(
      ad::constant(feat.reshaped({1, feat.dim(0), feat.dim(1), feat.dim(2)})));
  return out->value.reshaped({out->value.dim(1), out->value.dim(2), out->value.dim(3)});
}

void check_metric_image(const Tensor& image, const char* what) {
  if (image.ndim() != 3) {
    throw std::invalid_argument(std::string(what) + ": expected (C,H,W) image, got " +
                                image.shape_str());
  }
}

}  // namespace

RandomProjectionBackend::RandomProjectionBackend(const RandomProjectionConfig& cfg) : cfg_(cfg) {
  if (cfg_.scales < 1 || cfg_.base_features < 1 || cfg_.channels < 1) {
    throw std::invalid_argument("RandomProjectionBackend: bad config");
  }
  Rng rng(cfg_.seed);
  int64_t cin = cfg_.channels;
  for (int s = 0; s < cfg_.scales; ++s) {
    const int64_t cout = cfg_.base_features << s;
    Tensor w({cout, cin, 3, 3});
    const double std = 1.0 / std::sqrt(static_cast<double>(cin * 9));
    for (double& v : w.values()) v = std * rng.normal();
    Tensor b({cout});
    for (double& v : b.values()) v = 0.1 * rng.normal();
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
    cin = cout;
  }
}

std::vector<Tensor> RandomProjectionBackend::features(const Tensor& image) const {
  check_metric_image(image, "RandomProjectionBackend::features");
  if (image.dim(0) != cfg_.channels) {
    throw std::invalid_argument("RandomProjectionBackend: channel mismatch");
  }
  std::vector<Tensor> feats;
  feats.reserve(weights_.size());
  Tensor h = image;
  for (size_t s = 0; s < weights_.size(); ++s) {
    h = conv_relu(h, weights_[s], biases_[s]);
    Tensor normalized = h;
    normalize_positions(normalized);
    feats.push_back(std::move(normalized));
    if (s + 1 < weights_.size()) h = pool2_if_possible(h);
  }
  return feats;
}

double RandomProjectionBackend::feature_distance(const std::vector<Tensor>& fa,
                                                 const std::vector<Tensor>& fb) const {
  if (fa.size() != fb.size()) {
    throw std::invalid_argument("RandomProjectionBackend: feature list mismatch");
  }
  double total = 0.0;
  for (size_t s = 0; s < fa.size(); ++s) {
    check_same_shape(fa[s], fb[s], "RandomProjectionBackend::feature_distance");
    const int64_t n = fa[s].numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = fa[s][i] - fb[s][i];
      acc += d * d;
    }
    // mean over positions and channels of the squared differences
    total += acc / static_cast<double>(n);
  }
  return total / static_cast<double>(fa.size());
}

std::vector<double> RandomProjectionBackend::embedding(const Tensor& image) const {
  const std::vector<Tensor> feats = features(image);
  const Tensor& last = feats.back();
  const int64_t c = last.dim(0), hw = last.dim(1) * last.dim(2);
  std::vector<double> out(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int64_t p = 0; p < hw; ++p) acc += last[ch * hw + p];
    out[static_cast<size_t>(ch)] = acc / static_cast<double>(hw);
  }
  return out;
}

std::string RandomProjectionBackend::descriptor() const {
  return "random-projection(seed=" + std::to_string(cfg_.seed) +
         ",scales=" + std::to_string(cfg_.scales) +
         ",base=" + std::to_string(cfg_.base_features) + ")";
}

namespace {

using FeatureSet = std::vector<std::vector<Tensor>>;

FeatureSet extract_all(const std::vector<Tensor>& images, const PerceptualBackend& backend) {
  FeatureSet feats;
  feats.reserve(images.size());
  for (const Tensor& img : images) feats.push_back(backend.features(img));
  return feats;
}

ClusterAssignment assign_nearest(const FeatureSet& generated, const FeatureSet& training,
                                 const PerceptualBackend& backend) {
  if (generated.empty() || training.empty()) {
    throw std::invalid_argument("metrics: empty image set");
  }
  ClusterAssignment out;
  out.nearest.resize(generated.size());
  out.distance.resize(generated.size());
  for (size_t g = 0; g < generated.size(); ++g) {
    int best = 0;
    double best_d = backend.feature_distance(generated[g], training[0]);
    for (size_t t = 1; t < training.size(); ++t) {
      const double d = backend.feature_distance(generated[g], training[t]);
      if (d < best_d) {  // strict: ties keep the lowest index
        best_d = d;
        best = static_cast<int>(t);
      }
    }
    out.nearest[g] = best;
    out.distance[g] = best_d;
  }
  return out;
}

}  // namespace

double nearest_lpips(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                     const PerceptualBackend& backend) {
  const ClusterAssignment a =
      assign_nearest(extract_all(generated, backend), extract_all(training, backend), backend);
  double acc = 0.0;
  for (double d : a.distance) acc += d;
  return acc / static_cast<double>(a.distance.size());
}

IntraLpipsResult intra_lpips(const std::vector<Tensor>& generated,
                             const std::vector<Tensor>& training,
                             const PerceptualBackend& backend) {
  const FeatureSet gen_feats = extract_all(generated, backend);
  IntraLpipsResult res;
  res.assignment = assign_nearest(gen_feats, extract_all(training, backend), backend);
  const size_t clusters = training.size();
  res.cluster_sizes.assign(clusters, 0);
  std::vector<std::vector<size_t>> members(clusters);
  for (size_t g = 0; g < generated.size(); ++g) {
    const size_t c = static_cast<size_t>(res.assignment.nearest[g]);
    members[c].push_back(g);
    ++res.cluster_sizes[c];
  }
  std::vector<double> per_cluster(clusters, 0.0);
  for (size_t c = 0; c < clusters; ++c) {
    if (members[c].size() < 2) {
      res.flagged_clusters.push_back(static_cast<int>(c));
      continue;
    }
    double acc = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < members[c].size(); ++i) {
      for (size_t j = i + 1; j < members[c].size(); ++j) {
        acc += backend.feature_distance(gen_feats[members[c][i]], gen_feats[members[c][j]]);
        ++pairs;
      }
    }
    per_cluster[c] = acc / static_cast<double>(pairs);
  }
  double mean = 0.0;
  for (double v : per_cluster) mean += v;
  mean /= static_cast<double>(clusters);
  double var = 0.0;
  for (double v : per_cluster) var += (v - mean) * (v - mean);
  var /= static_cast<double>(clusters);
  res.mean = mean;
  res.std_dev = std::sqrt(var);
  return res;
}

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
  if (feats_a.ndim() != 2 || feats_b.ndim() != 2 || feats_a.dim(1) != feats_b.dim(1)) {
    throw std::invalid_argument("frechet_distance: want (M,D) and (K,D)");
  }
  const int64_t ma = feats_a.dim(0), mb = feats_b.dim(0), d = feats_a.dim(1);
  if (ma < 2 || mb < 2) throw std::invalid_argument("frechet_distance: need >= 2 samples");

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      feats_a.data(), ma, d);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> b(
      feats_b.data(), mb, d);

  const Vec mu_a = a.colwise().mean();
  const Vec mu_b = b.colwise().mean();
  const Mat ca = (a.rowwise() - mu_a.transpose()).transpose() *
                     (a.rowwise() - mu_a.transpose()) / static_cast<double>(ma - 1) +
                 1e-6 * Mat::Identity(d, d);
  const Mat cb = (b.rowwise() - mu_b.transpose()).transpose() *
                     (b.rowwise() - mu_b.transpose()) / static_cast<double>(mb - 1) +
                 1e-6 * Mat::Identity(d, d);

  // sqrt(ca) via eigendecomposition, then Tr sqrt(ca cb) through the
  // symmetrized product sqrt(ca) cb sqrt(ca); negative eigenvalues from
  // roundoff are clipped at zero.
  Eigen::SelfAdjointEigenSolver<Mat> es_a(ca);
  Vec ev = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat sqrt_ca = es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es_m(sqrt_ca * cb * sqrt_ca);
  const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
}

Tensor distance_table(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                      const PerceptualBackend& backend) {
  if (generated.empty() || training.empty()) {
    throw std::invalid_argument("distance_table: empty image set");
  }
  const FeatureSet gen_feats = extract_all(generated, backend);
  const FeatureSet train_feats = extract_all(training, backend);
  Tensor table({static_cast<int64_t>(generated.size()), static_cast<int64_t>(training.size())});
  for (size_t g = 0; g < generated.size(); ++g)
    for (size_t t = 0; t < training.size(); ++t)
      table[static_cast<int64_t>(g * training.size() + t)] =
          backend.feature_distance(gen_feats[g], train_feats[t]);
  return table;
}

EvalReport evaluate(const std::vector<Tensor>& generated, const std::vector<Tensor>& training,
                    const PerceptualBackend& backend, const EvalOptions& opts) {
  if (generated.empty() || training.empty()) {
    throw std::invalid_argument("evaluate: empty image set");
  }
  std::vector<Tensor> train_set = training;
  if (opts.flip_augment_training) {
    train_set.reserve(training.size() * 2);
    for (const Tensor& img : training) train_set.push_back(hflip(img));
  }

  EvalReport report;
  report.backend = backend.descriptor();
  report.nearest_lpips = nearest_lpips(generated, train_set, backend);
  const IntraLpipsResult intra = intra_lpips(generated, train_set, backend);
  report.intra_lpips_mean = intra.mean;
  report.intra_lpips_std = intra.std_dev;
  report.cluster_sizes = intra.cluster_sizes;
  report.flagged_clusters = intra.flagged_clusters;

  const int64_t dim = static_cast<int64_t>(backend.embedding(generated[0]).size());
  auto embed_all = [&](const std::vector<Tensor>& images) {
    Tensor feats({static_cast<int64_t>(images.size()), dim});
    for (size_t i = 0; i < images.size(); ++i) {
      const std::vector<double> e = backend.embedding(images[i]);
      std::copy(e.begin(), e.end(), feats.data() + static_cast<int64_t>(i) * dim);
    }
    return feats;
  };
  report.frechet = frechet_distance(embed_all(generated), embed_all(train_set));
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["nearest_lpips"] = report.nearest_lpips;
  j["intra_lpips_mean"] = report.intra_lpips_mean;
  j["intra_lpips_std"] = report.intra_lpips_std;
  j["frechet"] = report.frechet;
  j["cluster_sizes"] = report.cluster_sizes;
  j["flagged_clusters"] = report.flagged_clusters;
  j["backend"] = report.backend;
  return j.dump(2);
}

}  // namespace fsdiff

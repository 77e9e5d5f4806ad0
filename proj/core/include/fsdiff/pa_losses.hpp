// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fsdiff/autodiff.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Weights of the combined adaptation objective
///   L = L_simple + l1 L_vlb + l2 L_img + l3 L_hf + l4 L_hfmse.
struct LossWeights {
  double lambda1 = 0.001;  // variational-bound term
  double lambda2 = 0.5;    // image-level pairwise similarity
  double lambda3 = 0.5;    // high-frequency pairwise similarity
  double lambda4 = 0.05;   // high-frequency reconstruction

  bool operator==(const LossWeights&) const = default;
};

/// Throws std::invalid_argument unless all weights are finite and >= 0.
void validate(const LossWeights& w);

/// Row i holds the softmax over cosine similarities of sample i to every
/// other sample j != i (ascending j), shape (N, N-1). Rows sum to 1.
struct SimilarityDistribution {
  Tensor probs;
};

/// Cosine-softmax similarity rows over flattened per-sample vectors,
/// temperature 1. Requires N >= 2 and nonzero per-sample norms; a zero-norm
/// sample is an error rather than silently regularized.
SimilarityDistribution similarity_rows(const ImageBatch& batch);

/// Pairwise similarity preservation: sum_i KL(p_i_ada || p_i_sou) over the
/// cosine-softmax rows of the two batches of x0 predictions. The source
/// batch is treated as constant; gradients flow only through `ada`.
ad::Var pairwise_sim_loss(const ad::Var& src_x0_pred, const ad::Var& ada_x0_pred);

/// Same loss computed on the Haar high-frequency sums of the predictions.
ad::Var hf_pairwise_loss(const ad::Var& src_x0_pred, const ad::Var& ada_x0_pred);

/// Mean squared error between the high-frequency sums of the adapted x0
/// prediction and the real images.
ad::Var hf_mse_loss(const ad::Var& ada_x0_pred, const ImageBatch& x0);

/// Component terms of the combined objective. `simple` is required; the
/// rest may be null when a mode does not produce them.
struct LossTerms {
  ad::Var simple;
  ad::Var vlb;
  ad::Var img;
  ad::Var hf;
  ad::Var hf_mse;
};

/// Weighted total. Terms with weight exactly 0 (or null handles) are left
/// out of the graph entirely, so a zero-weight run is bit-identical to one
/// that never built the term. Throws on non-finite term values.
ad::Var total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace fsdiff

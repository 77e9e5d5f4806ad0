// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/pa_losses.hpp"

#include <cmath>
#include <stdexcept>

#include "fsdiff/wavelet.hpp"

namespace fsdiff {

void validate(const LossWeights& w) {
  for (double v : {w.lambda1, w.lambda2, w.lambda3, w.lambda4}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
    }
  }
}

namespace {

// log-softmax rows of pairwise cosine similarities, (N, N-1).
ad::Var similarity_log_rows(const ad::Var& batch) {
  const int64_t n = batch->value.dim(0);
  if (n < 2) throw std::invalid_argument("similarity rows: need at least 2 samples");
  ad::Var flat = ad::reshape(batch, {n, batch->value.numel() / n});
  ad::Var unit = ad::l2_normalize_rows(flat);
  ad::Var cos = ad::matmul(unit, ad::transpose2d(unit));
  return ad::log_softmax_lastdim(ad::drop_diagonal(cos));
}

ad::Var pairwise_kl(const ad::Var& src, const ad::Var& ada, const char* what) {
  if (src->value.dim(0) != ada->value.dim(0)) {
    throw std::invalid_argument(std::string(what) + ": batch size mismatch");
  }
  // Source rows are constants: detaching up front keeps the whole source
  // branch out of the gradient graph.
  ad::Var log_src = similarity_log_rows(ad::detach(src));
  ad::Var log_ada = similarity_log_rows(ada);
  // sum_i KL(p_ada_i || p_src_i) = sum p_ada (log p_ada - log p_src)
  return ad::sum(ad::mul(ad::exp(log_ada), ad::sub(log_ada, log_src)));
}

}  // namespace

SimilarityDistribution similarity_rows(const ImageBatch& batch) {
  check_image_batch(batch, "similarity_rows");
  const int64_t n = batch.dim(0);
  if (n < 2) throw std::invalid_argument("similarity_rows: need at least 2 samples");
  const int64_t m = batch.numel() / n;

  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* x = batch.data() + i * m;
    for (int64_t j = 0; j < m; ++j) s += x[j] * x[j];
    if (s == 0.0) throw std::invalid_argument("similarity_rows: zero-norm sample");
    norms[static_cast<size_t>(i)] = std::sqrt(s);
  }
  Tensor probs({n, n - 1});
  std::vector<double> row(static_cast<size_t>(n - 1));
  for (int64_t i = 0; i < n; ++i) {
    int64_t c = 0;
    double mx = -2.0;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      const double* a = batch.data() + i * m;
      const double* b = batch.data() + j * m;
      for (int64_t k = 0; k < m; ++k) dot += a[k] * b[k];
      const double cosv = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
      row[static_cast<size_t>(c++)] = cosv;
      mx = std::max(mx, cosv);
    }
    double z = 0.0;
    for (int64_t k = 0; k < n - 1; ++k) {
      row[static_cast<size_t>(k)] = std::exp(row[static_cast<size_t>(k)] - mx);
      z += row[static_cast<size_t>(k)];
    }
    for (int64_t k = 0; k < n - 1; ++k) probs[i * (n - 1) + k] = row[static_cast<size_t>(k)] / z;
  }
  return {std::move(probs)};
}

ad::Var pairwise_sim_loss(const ad::Var& src_x0_pred, const ad::Var& ada_x0_pred) {
  check_image_batch(src_x0_pred->value, "pairwise_sim_loss");
  check_image_batch(ada_x0_pred->value, "pairwise_sim_loss");
  return pairwise_kl(src_x0_pred, ada_x0_pred, "pairwise_sim_loss");
}

ad::Var hf_pairwise_loss(const ad::Var& src_x0_pred, const ad::Var& ada_x0_pred) {
  check_image_batch(src_x0_pred->value, "hf_pairwise_loss");
  check_image_batch(ada_x0_pred->value, "hf_pairwise_loss");
  return pairwise_kl(haar_hf(src_x0_pred), haar_hf(ada_x0_pred), "hf_pairwise_loss");
}

ad::Var hf_mse_loss(const ad::Var& ada_x0_pred, const ImageBatch& x0) {
  check_same_shape(ada_x0_pred->value, x0, "hf_mse_loss");
  Tensor target = hf_sum(haar_decompose(x0));
  return ad::mse(haar_hf(ada_x0_pred), ad::constant(std::move(target)));
}

namespace {

void check_finite_term(const ad::Var& term, const char* name) {
  if (!term->value.all_finite()) {
    throw std::invalid_argument(std::string("total_loss: non-finite ") + name);
  }
}

}  // namespace

ad::Var total_loss(const LossTerms& terms, const LossWeights& w) {
  validate(w);
  if (!terms.simple) throw std::invalid_argument("total_loss: missing simple term");
  check_finite_term(terms.simple, "L_simple");
  ad::Var total = terms.simple;
  const std::pair<const ad::Var*, double> weighted[] = {
      {&terms.vlb, w.lambda1},
      {&terms.img, w.lambda2},
      {&terms.hf, w.lambda3},
      {&terms.hf_mse, w.lambda4},
  };
  const char* names[] = {"L_vlb", "L_img", "L_hf", "L_hfmse"};
  for (int i = 0; i < 4; ++i) {
    const ad::Var& term = *weighted[i].first;
    if (!term || weighted[i].second == 0.0) continue;
    check_finite_term(term, names[i]);
    total = ad::add(total, ad::mul_scalar(term, weighted[i].second));
  }
  return total;
}

}  // namespace fsdiff

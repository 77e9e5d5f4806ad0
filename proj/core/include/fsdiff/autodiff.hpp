// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff::ad {

/// Reverse-mode automatic differentiation over `Tensor` values.
///
/// Graphs are built eagerly by the op functions below and freed when the
/// last `Var` handle goes out of scope. Nodes carry a creation id that is
/// strictly greater than those of their parents, so `backward` can process
/// nodes in descending id order and obtain a deterministic, single-threaded
/// accumulation order (bit-reproducible for fixed inputs).
///
/// Ops whose inputs all have `requires_grad == false` collapse to constant
/// nodes: no parents or backward closures are kept, which makes frozen-model
/// forward passes plain value computation.
struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated on first accumulation
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // accumulates into parents' grads
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value);  // requires_grad = true
Var detach(const Var& x);

/// Creates a custom op node. If no parent requires gradients, parents and
/// the backward closure are dropped and the node degenerates to a constant.
/// The closure receives the node (value + accumulated grad) and must add
/// into the parents' grads, e.g. via accumulate_grad.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

const Tensor& value(const Var& x);

/// Accumulates `g` into `p->grad` if `p` requires gradients.
void accumulate_grad(const Var& p, const Tensor& g);

/// Backpropagates from a scalar (1-element) root; seeds d(root)/d(root) = 1.
void backward(const Var& root);

// ---- elementwise (same shape) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var normal_cdf(const Var& z);
Var clamp_min(const Var& a, double lo);
/// Elementwise mask select: mask != 0 picks `a`, else `b`. Gradients flow
/// only into the selected branch of each element.
Var select(const Tensor& mask, const Var& a, const Var& b);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& a, int64_t c_begin, int64_t c_end);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // 2-d
Var transpose2d(const Var& a);
Var bmm(const Var& a, const Var& b);       // (N,P,Q) x (N,Q,R) -> (N,P,R)
Var transpose_last2(const Var& a);         // 3-d
Var softmax_lastdim(const Var& a);         // 2-d or 3-d
Var log_softmax_lastdim(const Var& a);
Var l2_normalize_rows(const Var& a);       // 2-d; throws on a zero-norm row
Var drop_diagonal(const Var& a);           // (N,N) -> (N,N-1), row-ordered by ascending j != i

// ---- neural network ----
/// 2-d convolution, stride 1, zero padding k/2 (odd square kernels only).
/// x: (N,Cin,H,W), w: (Cout,Cin,k,k), b: (Cout).
Var conv2d(const Var& x, const Var& w, const Var& b);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int64_t groups,
               double eps = 1e-5);
Var linear(const Var& x, const Var& w, const Var& b);  // x: (N,I), w: (O,I), b: (O)
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
/// Adds a per-sample, per-channel embedding: x (N,C,H,W) + e (N,C).
Var add_channel_embedding(const Var& x, const Var& e);
/// Inverted dropout; draws one uniform per element from `rng`.
Var dropout(const Var& x, double p, Rng& rng);

// ---- per-sample coefficient helpers (diffusion schedules) ----
/// y[n, ...] = scale[n] * x[n, ...]
Var per_sample_scale(const Var& x, std::span<const double> scale);
/// y[n, ...] = scale[n] * x[n, ...] + shift[n]
Var per_sample_affine(const Var& x, std::span<const double> scale,
                      std::span<const double> shift);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }

}  // namespace fsdiff::ad

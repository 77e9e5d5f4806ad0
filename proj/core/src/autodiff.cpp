// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace fsdiff::ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

int64_t next_id() {
  static std::atomic<int64_t> counter{0};
  return ++counter;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  n->id = next_id();
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
}

// Elementwise unary op with dy/dx expressed in terms of (x, y).
template <typename FwdFn, typename BwdFn>
Var unary_op(const Var& a, FwdFn fwd, BwdFn dydx) {
  Tensor out(a->value.shape());
  const double* x = a->value.data();
  double* y = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return make_node(std::move(out), {a}, [a, dydx](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    const double* x = a->value.data();
    const double* y = node.value.data();
    const double* g = node.grad.data();
    double* ga = a->grad.data();
    const int64_t n = node.value.numel();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * dydx(x[i], y[i]);
  });
}

int64_t last_dim(const Tensor& t) { return t.dim(t.ndim() - 1); }

// im2col for stride-1 convolution with zero padding k/2.
// Result: (Cin*k*k) x (N*H*W), column-major; column j = ((n*H)+oh)*W+ow.
Eigen::MatrixXd im2col(const Tensor& x, int64_t k) {
  const int64_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t pad = k / 2;
  Eigen::MatrixXd col(cin * k * k, n_batch * h * w);
  int64_t j = 0;
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t oh = 0; oh < h; ++oh) {
      for (int64_t ow = 0; ow < w; ++ow, ++j) {
        int64_t r = 0;
        for (int64_t ci = 0; ci < cin; ++ci) {
          for (int64_t ki = 0; ki < k; ++ki) {
            const int64_t ih = oh + ki - pad;
            for (int64_t kj = 0; kj < k; ++kj, ++r) {
              const int64_t iw = ow + kj - pad;
              col(r, j) = (ih >= 0 && ih < h && iw >= 0 && iw < w) ? x.at(n, ci, ih, iw) : 0.0;
            }
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = next_id();
  return n;
}

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->id = next_id();
  return n;
}

Var detach(const Var& x) { return constant(x->value); }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  return make_node(std::move(value), std::move(parents), std::move(backward_fn));
}

const Tensor& value(const Var& x) { return x->value; }

void accumulate_grad(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  ensure_grad(*p);
  p->grad += g;
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got " + root->value.shape_str());
  }
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Parents always predate children, so descending id is reverse-topological.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  ensure_grad(*root);
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "ad::add");
  Tensor out = a->value;
  out += b->value;
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    accumulate_grad(a, node.grad);
    accumulate_grad(b, node.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "ad::sub");
  Tensor out = a->value;
  out -= b->value;
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    accumulate_grad(a, node.grad);
    if (!b->requires_grad) return;
    ensure_grad(*b);
    b->grad -= node.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "ad::mul");
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const int64_t n = node.value.numel();
    const double* g = node.grad.data();
    if (a->requires_grad) {
      ensure_grad(*a);
      for (int64_t i = 0; i < n; ++i) a->grad[i] += g[i] * b->value[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t i = 0; i < n; ++i) b->grad[i] += g[i] * a->value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a->value, b->value, "ad::div");
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& node) {
    const int64_t n = node.value.numel();
    const double* g = node.grad.data();
    if (a->requires_grad) {
      ensure_grad(*a);
      for (int64_t i = 0; i < n; ++i) a->grad[i] += g[i] / b->value[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t i = 0; i < n; ++i) {
        const double bv = b->value[i];
        b->grad[i] -= g[i] * a->value[i] / (bv * bv);
      }
    }
  });
}

Var add_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var exp(const Var& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
  return unary_op(
      a,
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return x * s;
      },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var normal_cdf(const Var& z) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_op(
      z, [](double x) { return 0.5 * std::erfc(-x * inv_sqrt2); },
      [](double x, double) { return inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

Var clamp_min(const Var& a, double lo) {
  return unary_op(
      a, [lo](double x) { return x > lo ? x : lo; },
      [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Var select(const Tensor& mask, const Var& a, const Var& b) {
  check_same_shape(mask, a->value, "ad::select");
  check_same_shape(a->value, b->value, "ad::select");
  Tensor out(a->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = mask[i] != 0.0 ? a->value[i] : b->value[i];
  return make_node(std::move(out), {a, b}, [a, b, mask](Node& node) {
    const int64_t n = node.value.numel();
    const double* g = node.grad.data();
    if (a->requires_grad) {
      ensure_grad(*a);
      for (int64_t i = 0; i < n; ++i) {
        if (mask[i] != 0.0) a->grad[i] += g[i];
      }
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t i = 0; i < n; ++i) {
        if (mask[i] == 0.0) b->grad[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.values()) acc += v;
  return make_node(Tensor::scalar(acc), {a}, [a](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    const double g = node.grad[0];
    for (double& v : a->grad.values()) v += g;
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  return mul_scalar(sum(a), inv);
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a->value.reshaped(shape);
  return make_node(std::move(out), {a}, [a](Node& node) {
    if (!a->requires_grad) return;
    accumulate_grad(a, node.grad.reshaped(a->value.shape()));
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_image_batch(a->value, "ad::concat_channels");
  check_image_batch(b->value, "ad::concat_channels");
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw std::invalid_argument("ad::concat_channels: incompatible shapes");
  }
  const int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor out({n, ca + cb, sa[2], sa[3]});
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(a->value.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b->value.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_node(std::move(out), {a, b}, [a, b, n, ca, cb, hw](Node& node) {
    if (a->requires_grad) {
      ensure_grad(*a);
      for (int64_t i = 0; i < n; ++i) {
        const double* g = node.grad.data() + i * (ca + cb) * hw;
        double* ga = a->grad.data() + i * ca * hw;
        for (int64_t j = 0; j < ca * hw; ++j) ga[j] += g[j];
      }
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t i = 0; i < n; ++i) {
        const double* g = node.grad.data() + (i * (ca + cb) + ca) * hw;
        double* gb = b->grad.data() + i * cb * hw;
        for (int64_t j = 0; j < cb * hw; ++j) gb[j] += g[j];
      }
    }
  });
}

Var slice_channels(const Var& a, int64_t c_begin, int64_t c_end) {
  check_image_batch(a->value, "ad::slice_channels");
  const auto& s = a->value.shape();
  if (c_begin < 0 || c_end > s[1] || c_begin >= c_end) {
    throw std::invalid_argument("ad::slice_channels: bad channel range");
  }
  const int64_t n = s[0], c = s[1], cs = c_end - c_begin, hw = s[2] * s[3];
  Tensor out({n, cs, s[2], s[3]});
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(a->value.data() + (i * c + c_begin) * hw, cs * hw, out.data() + i * cs * hw);
  }
  return make_node(std::move(out), {a}, [a, n, c, c_begin, cs, hw](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t i = 0; i < n; ++i) {
      const double* g = node.grad.data() + i * cs * hw;
      double* ga = a->grad.data() + (i * c + c_begin) * hw;
      for (int64_t j = 0; j < cs * hw; ++j) ga[j] += g[j];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0)) {
    throw std::invalid_argument("ad::matmul: incompatible shapes " + a->value.shape_str() +
                                " x " + b->value.shape_str());
  }
  const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Tensor out({m, n});
  {
    CMapRM ma(a->value.data(), m, k);
    CMapRM mb(b->value.data(), k, n);
    MapRM mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& node) {
    CMapRM g(node.grad.data(), m, n);
    if (a->requires_grad) {
      ensure_grad(*a);
      CMapRM mb(b->value.data(), k, n);
      MapRM ga(a->grad.data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      CMapRM ma(a->value.data(), m, k);
      MapRM gb(b->grad.data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  });
}

Var transpose2d(const Var& a) {
  if (a->value.ndim() != 2) throw std::invalid_argument("ad::transpose2d: want 2-d");
  const int64_t m = a->value.dim(0), n = a->value.dim(1);
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a->value[i * n + j];
  return make_node(std::move(out), {a}, [a, m, n](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) a->grad[i * n + j] += node.grad[j * m + i];
  });
}

Var bmm(const Var& a, const Var& b) {
  if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.dim(0) != b->value.dim(0) ||
      a->value.dim(2) != b->value.dim(1)) {
    throw std::invalid_argument("ad::bmm: incompatible shapes");
  }
  const int64_t nb = a->value.dim(0), p = a->value.dim(1), q = a->value.dim(2),
                r = b->value.dim(2);
  Tensor out({nb, p, r});
  for (int64_t i = 0; i < nb; ++i) {
    CMapRM ma(a->value.data() + i * p * q, p, q);
    CMapRM mb(b->value.data() + i * q * r, q, r);
    MapRM mo(out.data() + i * p * r, p, r);
    mo.noalias() = ma * mb;
  }
  return make_node(std::move(out), {a, b}, [a, b, nb, p, q, r](Node& node) {
    for (int64_t i = 0; i < nb; ++i) {
      CMapRM g(node.grad.data() + i * p * r, p, r);
      if (a->requires_grad) {
        ensure_grad(*a);
        CMapRM mb(b->value.data() + i * q * r, q, r);
        MapRM ga(a->grad.data() + i * p * q, p, q);
        ga.noalias() += g * mb.transpose();
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        CMapRM ma(a->value.data() + i * p * q, p, q);
        MapRM gb(b->grad.data() + i * q * r, q, r);
        gb.noalias() += ma.transpose() * g;
      }
    }
  });
}

Var transpose_last2(const Var& a) {
  if (a->value.ndim() != 3) throw std::invalid_argument("ad::transpose_last2: want 3-d");
  const int64_t nb = a->value.dim(0), p = a->value.dim(1), q = a->value.dim(2);
  Tensor out({nb, q, p});
  for (int64_t i = 0; i < nb; ++i)
    for (int64_t x = 0; x < p; ++x)
      for (int64_t y = 0; y < q; ++y) out[(i * q + y) * p + x] = a->value[(i * p + x) * q + y];
  return make_node(std::move(out), {a}, [a, nb, p, q](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t i = 0; i < nb; ++i)
      for (int64_t x = 0; x < p; ++x)
        for (int64_t y = 0; y < q; ++y)
          a->grad[(i * p + x) * q + y] += node.grad[(i * q + y) * p + x];
  });
}

Var softmax_lastdim(const Var& a) {
  const int64_t l = last_dim(a->value);
  const int64_t rows = a->value.numel() / l;
  Tensor out(a->value.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a->value.data() + r * l;
    double* y = out.data() + r * l;
    double mx = x[0];
    for (int64_t i = 1; i < l; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < l; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (int64_t i = 0; i < l; ++i) y[i] /= z;
  }
  return make_node(std::move(out), {a}, [a, rows, l](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * l;
      const double* g = node.grad.data() + r * l;
      double* ga = a->grad.data() + r * l;
      double dot = 0.0;
      for (int64_t i = 0; i < l; ++i) dot += g[i] * y[i];
      for (int64_t i = 0; i < l; ++i) ga[i] += y[i] * (g[i] - dot);
    }
  });
}

Var log_softmax_lastdim(const Var& a) {
  const int64_t l = last_dim(a->value);
  const int64_t rows = a->value.numel() / l;
  Tensor out(a->value.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a->value.data() + r * l;
    double* y = out.data() + r * l;
    double mx = x[0];
    for (int64_t i = 1; i < l; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < l; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    for (int64_t i = 0; i < l; ++i) y[i] = x[i] - lse;
  }
  return make_node(std::move(out), {a}, [a, rows, l](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * l;
      const double* g = node.grad.data() + r * l;
      double* ga = a->grad.data() + r * l;
      double gsum = 0.0;
      for (int64_t i = 0; i < l; ++i) gsum += g[i];
      for (int64_t i = 0; i < l; ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
    }
  });
}

Var l2_normalize_rows(const Var& a) {
  if (a->value.ndim() != 2) throw std::invalid_argument("ad::l2_normalize_rows: want 2-d");
  const int64_t n = a->value.dim(0), m = a->value.dim(1);
  Tensor out(a->value.shape());
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const double* x = a->value.data() + r * m;
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) s += x[i] * x[i];
    const double nrm = std::sqrt(s);
    if (nrm == 0.0) throw std::invalid_argument("ad::l2_normalize_rows: zero-norm row");
    norms[static_cast<size_t>(r)] = nrm;
    double* y = out.data() + r * m;
    for (int64_t i = 0; i < m; ++i) y[i] = x[i] / nrm;
  }
  return make_node(std::move(out), {a}, [a, n, m, norms](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t r = 0; r < n; ++r) {
      const double* u = node.value.data() + r * m;
      const double* g = node.grad.data() + r * m;
      double* ga = a->grad.data() + r * m;
      double dot = 0.0;
      for (int64_t i = 0; i < m; ++i) dot += u[i] * g[i];
      const double inv = 1.0 / norms[static_cast<size_t>(r)];
      for (int64_t i = 0; i < m; ++i) ga[i] += (g[i] - u[i] * dot) * inv;
    }
  });
}

Var drop_diagonal(const Var& a) {
  if (a->value.ndim() != 2 || a->value.dim(0) != a->value.dim(1)) {
    throw std::invalid_argument("ad::drop_diagonal: want square 2-d");
  }
  const int64_t n = a->value.dim(0);
  if (n < 2) throw std::invalid_argument("ad::drop_diagonal: need n >= 2");
  Tensor out({n, n - 1});
  for (int64_t i = 0; i < n; ++i) {
    int64_t c = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      out[i * (n - 1) + c++] = a->value[i * n + j];
    }
  }
  return make_node(std::move(out), {a}, [a, n](Node& node) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    for (int64_t i = 0; i < n; ++i) {
      int64_t c = 0;
      for (int64_t j = 0; j < n; ++j) {
        if (j == i) continue;
        a->grad[i * n + j] += node.grad[i * (n - 1) + c++];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// neural network
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b) {
  check_image_batch(x->value, "ad::conv2d input");
  if (w->value.ndim() != 4 || w->value.dim(2) != w->value.dim(3) ||
      w->value.dim(2) % 2 == 0) {
    throw std::invalid_argument("ad::conv2d: want odd square kernel");
  }
  if (w->value.dim(1) != x->value.dim(1)) {
    throw std::invalid_argument("ad::conv2d: channel mismatch");
  }
  const int64_t n = x->value.dim(0), h = x->value.dim(2), wd = x->value.dim(3);
  const int64_t cout = w->value.dim(0), cin = w->value.dim(1), k = w->value.dim(2);
  if (b->value.numel() != cout) throw std::invalid_argument("ad::conv2d: bias size mismatch");

  const Eigen::MatrixXd col = im2col(x->value, k);
  Tensor out({n, cout, h, wd});
  {
    CMapRM wm(w->value.data(), cout, cin * k * k);
    Eigen::MatrixXd y = wm * col;  // cout x (n*h*w)
    const int64_t hw = h * wd;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t co = 0; co < cout; ++co) {
        double* o = out.data() + (i * cout + co) * hw;
        const double bias = b->value[co];
        for (int64_t p = 0; p < hw; ++p) o[p] = y(co, i * hw + p) + bias;
      }
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, n, h, wd, cout, cin, k](Node& node) {
    const int64_t hw = h * wd, pad = k / 2;
    Eigen::MatrixXd gy(cout, n * hw);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t co = 0; co < cout; ++co) {
        const double* g = node.grad.data() + (i * cout + co) * hw;
        for (int64_t p = 0; p < hw; ++p) gy(co, i * hw + p) = g[p];
      }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t co = 0; co < cout; ++co) b->grad[co] += gy.row(co).sum();
    }
    if (w->requires_grad) {
      ensure_grad(*w);
      const Eigen::MatrixXd col = im2col(x->value, k);
      MapRM gw(w->grad.data(), cout, cin * k * k);
      gw.noalias() += gy * col.transpose();
    }
    if (x->requires_grad) {
      ensure_grad(*x);
      CMapRM wm(w->value.data(), cout, cin * k * k);
      Eigen::MatrixXd gcol = wm.transpose() * gy;  // (cin*k*k) x (n*hw)
      int64_t j = 0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t oh = 0; oh < h; ++oh)
          for (int64_t ow = 0; ow < wd; ++ow, ++j) {
            int64_t r = 0;
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t ki = 0; ki < k; ++ki) {
                const int64_t ih = oh + ki - pad;
                if (ih < 0 || ih >= h) {
                  r += k;
                  continue;
                }
                for (int64_t kj = 0; kj < k; ++kj, ++r) {
                  const int64_t iw = ow + kj - pad;
                  if (iw >= 0 && iw < wd) x->grad.at(i, ci, ih, iw) += gcol(r, j);
                }
              }
          }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int64_t groups, double eps) {
  check_image_batch(x->value, "ad::group_norm");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
  if (groups <= 0 || c % groups != 0) {
    throw std::invalid_argument("ad::group_norm: groups must divide channels");
  }
  if (gamma->value.numel() != c || beta->value.numel() != c) {
    throw std::invalid_argument("ad::group_norm: affine size mismatch");
  }
  const int64_t cg = c / groups, gsize = cg * hw;
  Tensor out(x->value.shape());
  std::vector<double> means(static_cast<size_t>(n * groups));
  std::vector<double> invstds(static_cast<size_t>(n * groups));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t g = 0; g < groups; ++g) {
      const double* xs = x->value.data() + (i * c + g * cg) * hw;
      double m = 0.0;
      for (int64_t j = 0; j < gsize; ++j) m += xs[j];
      m /= static_cast<double>(gsize);
      double v = 0.0;
      for (int64_t j = 0; j < gsize; ++j) {
        const double d = xs[j] - m;
        v += d * d;
      }
      v /= static_cast<double>(gsize);
      const double inv = 1.0 / std::sqrt(v + eps);
      means[static_cast<size_t>(i * groups + g)] = m;
      invstds[static_cast<size_t>(i * groups + g)] = inv;
      for (int64_t cc = 0; cc < cg; ++cc) {
        const int64_t ch = g * cg + cc;
        const double ga = gamma->value[ch], be = beta->value[ch];
        const double* xr = x->value.data() + (i * c + ch) * hw;
        double* yr = out.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) yr[j] = (xr[j] - m) * inv * ga + be;
      }
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, n, c, hw, groups, cg, gsize, means, invstds](Node& node) {
                     if (beta->requires_grad) ensure_grad(*beta);
                     if (gamma->requires_grad) ensure_grad(*gamma);
                     if (x->requires_grad) ensure_grad(*x);
                     std::vector<double> xhat(static_cast<size_t>(gsize));
                     std::vector<double> dxhat(static_cast<size_t>(gsize));
                     for (int64_t i = 0; i < n; ++i) {
                       for (int64_t g = 0; g < groups; ++g) {
                         const double m = means[static_cast<size_t>(i * groups + g)];
                         const double inv = invstds[static_cast<size_t>(i * groups + g)];
                         for (int64_t cc = 0; cc < cg; ++cc) {
                           const int64_t ch = g * cg + cc;
                           const double* xr = x->value.data() + (i * c + ch) * hw;
                           const double* gr = node.grad.data() + (i * c + ch) * hw;
                           const double ga = gamma->value[ch];
                           double dga = 0.0, dbe = 0.0;
                           for (int64_t j = 0; j < hw; ++j) {
                             const double xh = (xr[j] - m) * inv;
                             xhat[static_cast<size_t>(cc * hw + j)] = xh;
                             dxhat[static_cast<size_t>(cc * hw + j)] = gr[j] * ga;
                             dga += gr[j] * xh;
                             dbe += gr[j];
                           }
                           if (gamma->requires_grad) gamma->grad[ch] += dga;
                           if (beta->requires_grad) beta->grad[ch] += dbe;
                         }
                         if (!x->requires_grad) continue;
                         double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                         for (int64_t j = 0; j < gsize; ++j) {
                           sum_dxhat += dxhat[static_cast<size_t>(j)];
                           sum_dxhat_xhat +=
                               dxhat[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
                         }
                         const double inv_gsize = 1.0 / static_cast<double>(gsize);
                         for (int64_t cc = 0; cc < cg; ++cc) {
                           const int64_t ch = g * cg + cc;
                           double* gx = x->grad.data() + (i * c + ch) * hw;
                           for (int64_t j = 0; j < hw; ++j) {
                             const double xh = xhat[static_cast<size_t>(cc * hw + j)];
                             const double dxh = dxhat[static_cast<size_t>(cc * hw + j)];
                             gx[j] += inv *
                                      (dxh - inv_gsize * (sum_dxhat + xh * sum_dxhat_xhat));
                           }
                         }
                       }
                     }
                   });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x->value.ndim() != 2 || w->value.ndim() != 2 || x->value.dim(1) != w->value.dim(1)) {
    throw std::invalid_argument("ad::linear: incompatible shapes");
  }
  const int64_t n = x->value.dim(0), in = x->value.dim(1), out_dim = w->value.dim(0);
  if (b->value.numel() != out_dim) throw std::invalid_argument("ad::linear: bias size mismatch");
  Tensor out({n, out_dim});
  {
    CMapRM mx(x->value.data(), n, in);
    CMapRM mw(w->value.data(), out_dim, in);
    MapRM mo(out.data(), n, out_dim);
    mo.noalias() = mx * mw.transpose();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t o = 0; o < out_dim; ++o) out[i * out_dim + o] += b->value[o];
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, n, in, out_dim](Node& node) {
    CMapRM g(node.grad.data(), n, out_dim);
    if (x->requires_grad) {
      ensure_grad(*x);
      CMapRM mw(w->value.data(), out_dim, in);
      MapRM gx(x->grad.data(), n, in);
      gx.noalias() += g * mw;
    }
    if (w->requires_grad) {
      ensure_grad(*w);
      CMapRM mx(x->value.data(), n, in);
      MapRM gw(w->grad.data(), out_dim, in);
      gw.noalias() += g.transpose() * mx;
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int64_t o = 0; o < out_dim; ++o) b->grad[o] += g.col(o).sum();
    }
  });
}

Var avg_pool2(const Var& x) {
  check_image_batch(x->value, "ad::avg_pool2");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("ad::avg_pool2: odd spatial dims");
  Tensor out({n, c, h / 2, w / 2});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < h / 2; ++oh)
        for (int64_t ow = 0; ow < w / 2; ++ow) {
          out.at(i, ch, oh, ow) = 0.25 * (x->value.at(i, ch, 2 * oh, 2 * ow) +
                                          x->value.at(i, ch, 2 * oh, 2 * ow + 1) +
                                          x->value.at(i, ch, 2 * oh + 1, 2 * ow) +
                                          x->value.at(i, ch, 2 * oh + 1, 2 * ow + 1));
        }
  return make_node(std::move(out), {x}, [x, n, c, h, w](Node& node) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oh = 0; oh < h / 2; ++oh)
          for (int64_t ow = 0; ow < w / 2; ++ow) {
            const double g = 0.25 * node.grad.at(i, ch, oh, ow);
            x->grad.at(i, ch, 2 * oh, 2 * ow) += g;
            x->grad.at(i, ch, 2 * oh, 2 * ow + 1) += g;
            x->grad.at(i, ch, 2 * oh + 1, 2 * ow) += g;
            x->grad.at(i, ch, 2 * oh + 1, 2 * ow + 1) += g;
          }
  });
}

Var upsample_nearest2(const Var& x) {
  check_image_batch(x->value, "ad::upsample_nearest2");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
                w = x->value.dim(3);
  Tensor out({n, c, h * 2, w * 2});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < 2 * h; ++oh)
        for (int64_t ow = 0; ow < 2 * w; ++ow)
          out.at(i, ch, oh, ow) = x->value.at(i, ch, oh / 2, ow / 2);
  return make_node(std::move(out), {x}, [x, n, c, h, w](Node& node) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oh = 0; oh < 2 * h; ++oh)
          for (int64_t ow = 0; ow < 2 * w; ++ow)
            x->grad.at(i, ch, oh / 2, ow / 2) += node.grad.at(i, ch, oh, ow);
  });
}

Var add_channel_embedding(const Var& x, const Var& e) {
  check_image_batch(x->value, "ad::add_channel_embedding");
  const int64_t n = x->value.dim(0), c = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
  if (e->value.ndim() != 2 || e->value.dim(0) != n || e->value.dim(1) != c) {
    throw std::invalid_argument("ad::add_channel_embedding: embedding shape mismatch");
  }
  Tensor out = x->value;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      double* o = out.data() + (i * c + ch) * hw;
      const double ev = e->value[i * c + ch];
      for (int64_t j = 0; j < hw; ++j) o[j] += ev;
    }
  return make_node(std::move(out), {x, e}, [x, e, n, c, hw](Node& node) {
    accumulate_grad(x, node.grad);
    if (!e->requires_grad) return;
    ensure_grad(*e);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* g = node.grad.data() + (i * c + ch) * hw;
        double s = 0.0;
        for (int64_t j = 0; j < hw; ++j) s += g[j];
        e->grad[i * c + ch] += s;
      }
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("ad::dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  Tensor mask(x->value.shape());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = rng.uniform() >= p ? keep : 0.0;
  Tensor out(x->value.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] * mask[i];
  return make_node(std::move(out), {x}, [x, mask](Node& node) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const int64_t n = node.value.numel();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += node.grad[i] * mask[i];
  });
}

Var per_sample_scale(const Var& x, std::span<const double> scale) {
  const int64_t n = x->value.dim(0);
  if (static_cast<int64_t>(scale.size()) != n) {
    throw std::invalid_argument("ad::per_sample_scale: coefficient count mismatch");
  }
  const int64_t stride = x->value.numel() / n;
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double s = scale[static_cast<size_t>(i)];
    const double* xs = x->value.data() + i * stride;
    double* o = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = s * xs[j];
  }
  std::vector<double> sc(scale.begin(), scale.end());
  return make_node(std::move(out), {x}, [x, sc, n, stride](Node& node) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    for (int64_t i = 0; i < n; ++i) {
      const double s = sc[static_cast<size_t>(i)];
      const double* g = node.grad.data() + i * stride;
      double* gx = x->grad.data() + i * stride;
      for (int64_t j = 0; j < stride; ++j) gx[j] += s * g[j];
    }
  });
}

Var per_sample_affine(const Var& x, std::span<const double> scale,
                      std::span<const double> shift) {
  const int64_t n = x->value.dim(0);
  if (static_cast<int64_t>(scale.size()) != n || static_cast<int64_t>(shift.size()) != n) {
    throw std::invalid_argument("ad::per_sample_affine: coefficient count mismatch");
  }
  const int64_t stride = x->value.numel() / n;
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double s = scale[static_cast<size_t>(i)], t = shift[static_cast<size_t>(i)];
    const double* xs = x->value.data() + i * stride;
    double* o = out.data() + i * stride;
    for (int64_t j = 0; j < stride; ++j) o[j] = s * xs[j] + t;
  }
  std::vector<double> sc(scale.begin(), scale.end());
  return make_node(std::move(out), {x}, [x, sc, n, stride](Node& node) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    for (int64_t i = 0; i < n; ++i) {
      const double s = sc[static_cast<size_t>(i)];
      const double* g = node.grad.data() + i * stride;
      double* gx = x->grad.data() + i * stride;
      for (int64_t j = 0; j < stride; ++j) gx[j] += s * g[j];
    }
  });
}

}  // namespace fsdiff::ad

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"

using namespace fsdiff;

namespace {

using GraphFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Checks reverse-mode gradients of a scalar-valued graph against central
// finite differences on every input coordinate.
void check_gradients(std::vector<Tensor> inputs, const GraphFn& f, double tol = 2e-6,
                     double h = 1e-5) {
  std::vector<ad::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t));
  const ad::Var out = f(leaves);
  ASSERT_EQ(out->value.numel(), 1);
  ad::backward(out);

  auto eval = [&](const std::vector<Tensor>& vals) {
    std::vector<ad::Var> ls;
    for (const Tensor& t : vals) ls.push_back(ad::leaf(t));
    return ad::value(f(ls))[0];
  };

  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      std::vector<Tensor> vals = inputs;
      vals[k][i] = inputs[k][i] + h;
      const double up = eval(vals);
      vals[k][i] = inputs[k][i] - h;
      const double down = eval(vals);
      const double fd = (up - down) / (2.0 * h);
      const double got = leaves[k]->grad.empty() ? 0.0 : leaves[k]->grad[i];
      EXPECT_LT(oracle::rel_err(got, fd), tol)
          << "input " << k << " coord " << i << ": ad=" << got << " fd=" << fd;
    }
  }
}

Tensor randt(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t = rng.normal_tensor(std::move(shape));
  t *= scale;
  return t;
}

}  // namespace

TEST(Autodiff, ElementwiseBinaryOps) {
  check_gradients({randt({2, 3}, 1), randt({2, 3}, 2)},
                  [](const auto& v) { return ad::sum(ad::mul(ad::add(v[0], v[1]), v[0])); });
  check_gradients({randt({2, 3}, 3), randt({2, 3}, 4)},
                  [](const auto& v) { return ad::sum(ad::sub(v[0], v[1])); });
  Tensor denom = randt({2, 3}, 5);
  for (double& x : denom.values()) x = 1.0 + std::abs(x);  // keep away from 0
  check_gradients({randt({2, 3}, 6), denom},
                  [](const auto& v) { return ad::sum(ad::div(v[0], v[1])); });
}

TEST(Autodiff, ElementwiseUnaryOps) {
  check_gradients({randt({3, 3}, 7)}, [](const auto& v) {
    return ad::sum(ad::silu(ad::sigmoid(ad::add_scalar(ad::mul_scalar(v[0], 1.7), 0.3))));
  });
  Tensor pos = randt({2, 4}, 8);
  for (double& x : pos.values()) x = 0.5 + std::abs(x);
  check_gradients({pos}, [](const auto& v) {
    return ad::sum(ad::log(ad::sqrt(ad::exp(ad::mul_scalar(ad::square(v[0]), 0.1)))));
  });
  check_gradients({randt({2, 3}, 9)},
                  [](const auto& v) { return ad::sum(ad::normal_cdf(v[0])); });
  check_gradients({randt({5}, 10)}, [](const auto& v) { return ad::mean(ad::neg(v[0])); });
}

TEST(Autodiff, ClampAndSelect) {
  Tensor x = randt({6}, 11);
  x[0] = 2.0;
  x[1] = -2.0;  // keep clear of the clamp threshold so FD is valid
  check_gradients({x}, [](const auto& v) { return ad::sum(ad::clamp_min(v[0], 0.25)); });

  Tensor mask({2, 2});
  mask[0] = 1.0;
  mask[3] = 1.0;
  check_gradients({randt({2, 2}, 12), randt({2, 2}, 13)}, [mask](const auto& v) {
    return ad::sum(ad::select(mask, ad::square(v[0]), ad::mul_scalar(v[1], 3.0)));
  });
}

TEST(Autodiff, ReductionsAndMse) {
  check_gradients({randt({2, 3}, 14), randt({2, 3}, 15)},
                  [](const auto& v) { return ad::mse(v[0], v[1]); });
  check_gradients({randt({4}, 16)}, [](const auto& v) { return ad::mean(v[0]); });
}

TEST(Autodiff, ShapeOps) {
  check_gradients({randt({1, 2, 2, 2}, 17), randt({1, 3, 2, 2}, 18)}, [](const auto& v) {
    const ad::Var cat = ad::concat_channels(v[0], v[1]);
    return ad::sum(ad::square(ad::slice_channels(cat, 1, 4)));
  });
  check_gradients({randt({2, 6}, 19)}, [](const auto& v) {
    return ad::sum(ad::square(ad::reshape(v[0], {3, 4})));
  });
}

TEST(Autodiff, MatmulFamily) {
  check_gradients({randt({2, 3}, 20), randt({3, 4}, 21)}, [](const auto& v) {
    return ad::sum(ad::square(ad::matmul(v[0], v[1])));
  });
  check_gradients({randt({3, 2}, 22)}, [](const auto& v) {
    return ad::sum(ad::square(ad::transpose2d(v[0])));
  });
  check_gradients({randt({2, 2, 3}, 23), randt({2, 3, 2}, 24)}, [](const auto& v) {
    return ad::sum(ad::square(ad::bmm(v[0], v[1])));
  });
  check_gradients({randt({2, 2, 3}, 25)}, [](const auto& v) {
    return ad::sum(ad::square(ad::transpose_last2(v[0])));
  });
}

TEST(Autodiff, SoftmaxFamily) {
  check_gradients({randt({3, 4}, 26)}, [](const auto& v) {
    return ad::sum(ad::square(ad::softmax_lastdim(v[0])));
  });
  check_gradients({randt({2, 3, 3}, 27)}, [](const auto& v) {
    return ad::sum(ad::square(ad::softmax_lastdim(v[0])));
  });
  check_gradients({randt({3, 4}, 28)}, [](const auto& v) {
    return ad::sum(ad::square(ad::log_softmax_lastdim(v[0])));
  });
}

TEST(Autodiff, RowNormalizeAndDropDiagonal) {
  Tensor x = randt({3, 5}, 29);
  const Tensor probe = randt({3, 5}, 129);
  check_gradients({x}, [probe](const auto& v) {
    return ad::sum(ad::mul(ad::l2_normalize_rows(v[0]), ad::constant(probe)));
  });
  check_gradients({randt({4, 4}, 30)}, [](const auto& v) {
    return ad::sum(ad::square(ad::drop_diagonal(v[0])));
  });
  Tensor zero({2, 3});
  EXPECT_THROW(ad::l2_normalize_rows(ad::leaf(zero)), std::invalid_argument);
}

TEST(Autodiff, Conv2d) {
  check_gradients({randt({2, 2, 4, 4}, 31), randt({3, 2, 3, 3}, 32, 0.5), randt({3}, 33)},
                  [](const auto& v) {
                    return ad::sum(ad::square(ad::conv2d(v[0], v[1], v[2])));
                  });
  // 1x1 kernels (attention projections)
  check_gradients({randt({1, 3, 2, 2}, 34), randt({2, 3, 1, 1}, 35), randt({2}, 36)},
                  [](const auto& v) {
                    return ad::sum(ad::square(ad::conv2d(v[0], v[1], v[2])));
                  });
  EXPECT_THROW(ad::conv2d(ad::leaf(randt({1, 2, 4, 4}, 37)), ad::leaf(randt({3, 2, 2, 2}, 38)),
                          ad::leaf(randt({3}, 39))),
               std::invalid_argument);
}

TEST(Autodiff, GroupNorm) {
  check_gradients({randt({2, 4, 3, 3}, 40), randt({4}, 41, 0.2), randt({4}, 42, 0.2)},
                  [](const auto& v) {
                    return ad::sum(ad::square(ad::group_norm(v[0], v[1], v[2], 2)));
                  },
                  5e-5);
  EXPECT_THROW(ad::group_norm(ad::leaf(randt({1, 3, 2, 2}, 43)), ad::leaf(randt({3}, 44)),
                              ad::leaf(randt({3}, 45)), 2),
               std::invalid_argument);
}

TEST(Autodiff, LinearPoolUpsample) {
  check_gradients({randt({3, 4}, 46), randt({2, 4}, 47), randt({2}, 48)}, [](const auto& v) {
    return ad::sum(ad::square(ad::linear(v[0], v[1], v[2])));
  });
  check_gradients({randt({1, 2, 4, 4}, 49)}, [](const auto& v) {
    return ad::sum(ad::square(ad::avg_pool2(v[0])));
  });
  check_gradients({randt({1, 2, 2, 2}, 50)}, [](const auto& v) {
    return ad::sum(ad::square(ad::upsample_nearest2(v[0])));
  });
}

TEST(Autodiff, EmbeddingAndPerSample) {
  check_gradients({randt({2, 3, 2, 2}, 51), randt({2, 3}, 52)}, [](const auto& v) {
    return ad::sum(ad::square(ad::add_channel_embedding(v[0], v[1])));
  });
  const std::vector<double> scale{0.5, -1.5};
  const std::vector<double> shift{0.1, 0.7};
  check_gradients({randt({2, 1, 2, 2}, 53)}, [&](const auto& v) {
    return ad::sum(ad::square(ad::per_sample_scale(v[0], scale)));
  });
  check_gradients({randt({2, 1, 2, 2}, 54)}, [&](const auto& v) {
    return ad::sum(ad::square(ad::per_sample_affine(v[0], scale, shift)));
  });
}

TEST(Autodiff, DropoutMaskConsistency) {
  // With a re-seeded rng per evaluation the mask is fixed, so FD applies.
  check_gradients({randt({3, 4}, 55)}, [](const auto& v) {
    Rng rng(99);
    return ad::sum(ad::square(ad::dropout(v[0], 0.4, rng)));
  });
  // p = 0 is the identity.
  Rng rng(1);
  const ad::Var x = ad::leaf(randt({2, 2}, 56));
  EXPECT_EQ(ad::dropout(x, 0.0, rng), x);
  EXPECT_THROW(ad::dropout(x, 1.0, rng), std::invalid_argument);
}

TEST(Autodiff, DetachBlocksGradient) {
  const Tensor x = randt({2, 2}, 57);
  const ad::Var a = ad::leaf(x);
  const ad::Var out = ad::sum(ad::mul(ad::detach(a), a));
  ad::backward(out);
  // d/da of (const * a) = const, not 2a.
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(a->grad[i], x[i]);
}

TEST(Autodiff, NoGradGraphCollapses) {
  const ad::Var c = ad::constant(randt({2, 2}, 58));
  const ad::Var out = ad::sum(ad::square(ad::silu(c)));
  EXPECT_FALSE(out->requires_grad);
  EXPECT_TRUE(out->parents.empty());
  ad::backward(out);  // no-op
  EXPECT_TRUE(out->grad.empty());
}

TEST(Autodiff, BackwardIsDeterministic) {
  auto build = [] {
    Rng rng(5);
    const ad::Var w = ad::leaf(rng.normal_tensor({4, 4}));
    const ad::Var x = ad::constant(rng.normal_tensor({4, 4}));
    const ad::Var out = ad::sum(ad::square(ad::matmul(ad::silu(w), x)));
    ad::backward(out);
    return w->grad;
  };
  const Tensor g1 = build();
  const Tensor g2 = build();
  for (int64_t i = 0; i < g1.numel(); ++i) {
    EXPECT_EQ(g1[i], g2[i]);  // bitwise
  }
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  // f(x) = sum(x * x) via two handles to the same node: grad = 2x.
  const Tensor x = randt({3}, 59);
  const ad::Var a = ad::leaf(x);
  const ad::Var out = ad::sum(ad::mul(a, a));
  ad::backward(out);
  for (int64_t i = 0; i < 3; ++i) EXPECT_NEAR(a->grad[i], 2.0 * x[i], 1e-12);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  EXPECT_THROW(ad::backward(ad::leaf(randt({2, 2}, 60))), std::invalid_argument);
}

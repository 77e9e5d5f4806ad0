// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "fsdiff/denoiser.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/metrics.hpp"
#include "fsdiff/optimizer.hpp"
#include "fsdiff/pa_losses.hpp"
#include "fsdiff/wavelet.hpp"

using namespace fsdiff;

namespace {

DenoiserConfig bench_config() {
  DenoiserConfig cfg;
  cfg.image_size = 16;
  cfg.channels = 1;
  cfg.base_width = 16;
  cfg.depth = 1;
  cfg.time_embed_dim = 32;
  cfg.learn_variance = true;
  return cfg;
}

void BM_DenoiserForward(benchmark::State& state) {
  const DenoiserConfig cfg = bench_config();
  const Denoiser net(cfg);
  Rng rng(1);
  const Params params = net.init_params(rng);
  const auto leaves = net.make_leaves(params, false);
  const Tensor x = rng.normal_tensor({state.range(0), 1, 16, 16});
  const std::vector<int> t(static_cast<size_t>(state.range(0)), 50);
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(leaves, x, t));
  }
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(8);

void BM_DenoiserTrainStep(benchmark::State& state) {
  const DenoiserConfig cfg = bench_config();
  const Denoiser net(cfg);
  Rng rng(1);
  Params params = net.init_params(rng);
  const NoiseSchedule s = build_default_schedule(100);
  const Tensor x0 = rng.normal_tensor({8, 1, 16, 16});
  const std::vector<int> t(8, 50);
  const Tensor eps = rng.normal_tensor(x0.shape());
  const Tensor xt = q_sample(x0, t, eps, s);
  Adam opt;
  for (auto _ : state) {
    auto leaves = net.make_leaves(params, true);
    const DenoiserOutput out = net.forward(leaves, xt, t, &rng);
    LossTerms terms;
    terms.simple = loss_simple(eps, out.eps_pred);
    terms.vlb = loss_vlb(x0, xt, t, out, s);
    const ad::Var total = total_loss(terms, {});
    ad::backward(total);
    opt.step(params, leaves);
  }
}
BENCHMARK(BM_DenoiserTrainStep);

void BM_HaarDecompose(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = rng.normal_tensor({8, 1, 16, 16});
  for (auto _ : state) {
    benchmark::DoNotOptimize(haar_decompose(x));
  }
}
BENCHMARK(BM_HaarDecompose);

void BM_PairwiseLoss(benchmark::State& state) {
  Rng rng(4);
  const ad::Var src = ad::constant(rng.normal_tensor({8, 1, 16, 16}));
  for (auto _ : state) {
    const ad::Var ada = ad::leaf(rng.normal_tensor({8, 1, 16, 16}));
    const ad::Var loss = pairwise_sim_loss(src, ada);
    ad::backward(loss);
    benchmark::DoNotOptimize(loss->value[0]);
  }
}
BENCHMARK(BM_PairwiseLoss);

void BM_PerceptualDistance(benchmark::State& state) {
  Rng rng(5);
  const RandomProjectionBackend backend({.seed = 17, .channels = 1});
  const Tensor a = rng.normal_tensor({1, 16, 16});
  const Tensor b = rng.normal_tensor({1, 16, 16});
  for (auto _ : state) {
    benchmark::DoNotOptimize(backend.distance(a, b));
  }
}
BENCHMARK(BM_PerceptualDistance);

}  // namespace

BENCHMARK_MAIN();

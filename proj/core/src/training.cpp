// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/training.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fsdiff/diffusion.hpp"
#include "fsdiff/pa_losses.hpp"

namespace fsdiff {

CsvLogger::CsvLogger(std::ostream& out) : out_(out) {
  out_ << "iteration,l_simple,l_vlb,l_img,l_hf,l_hfmse,total\n";
}

void CsvLogger::log(const StepLog& row) {
  out_ << row.iteration << ',' << format_double(row.l_simple) << ',' << format_double(row.l_vlb)
       << ',' << format_double(row.l_img) << ',' << format_double(row.l_hf) << ','
       << format_double(row.l_hfmse) << ',' << format_double(row.total) << '\n';
}

namespace {

void check_dataset(const TrainConfig& cfg, const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("training: empty dataset");
  if (dataset.channels() != cfg.model.channels || dataset.height() != cfg.model.image_size ||
      dataset.width() != cfg.model.image_size) {
    std::ostringstream msg;
    msg << "training: dataset images are (" << dataset.channels() << "," << dataset.height()
        << "," << dataset.width() << ") but the model expects (" << cfg.model.channels << ","
        << cfg.model.image_size << "," << cfg.model.image_size << ")";
    throw std::invalid_argument(msg.str());
  }
  if (cfg.mode == TrainMode::kPa && dataset.size() < 2) {
    throw std::invalid_argument("training: pa mode needs at least 2 images (pairwise losses)");
  }
}

double scalar(const ad::Var& v) { return v ? v->value[0] : 0.0; }

Checkpoint snapshot(const TrainConfig& cfg, const NoiseSchedule& s, const Params& params,
                    const Adam& opt, const Rng& rng, int64_t iteration) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.schedule = s;
  ckpt.params = params;
  ckpt.opt_state = opt.state();
  ckpt.rng_state = rng.state();
  ckpt.iteration = iteration;
  return ckpt;
}

Checkpoint run_loop(const TrainConfig& cfg, const Dataset& dataset, Params params, Adam opt,
                    Rng rng, int64_t start_iteration, const Params* source_params,
                    const TrainHooks& hooks) {
  const bool adaptation = cfg.mode != TrainMode::kScratch;
  if (adaptation && !source_params) {
    throw std::invalid_argument("training: adaptation modes need a source model");
  }

  // Finetune is the pa loop with the pairwise terms switched off.
  LossWeights weights = cfg.weights;
  if (cfg.mode == TrainMode::kFinetune) {
    weights.lambda2 = weights.lambda3 = weights.lambda4 = 0.0;
  }
  if (!cfg.model.learn_variance) weights.lambda1 = 0.0;

  const NoiseSchedule s = build_schedule(cfg.T, cfg.resolved_beta_start(), cfg.resolved_beta_end());
  const Denoiser net(cfg.model);
  std::vector<ad::Var> source_leaves;
  if (adaptation) source_leaves = net.make_leaves(*source_params, false);

  const int64_t nb = cfg.batch_size;
  std::vector<int64_t> indices(static_cast<size_t>(nb));
  std::vector<uint8_t> flips;
  std::vector<int> t(static_cast<size_t>(nb));
  const bool pairwise = adaptation && nb >= 2;

  for (int64_t iter = start_iteration; iter < cfg.iterations; ++iter) {
    // Draw order per step: indices, flips, timesteps, noise, dropout.
    for (auto& idx : indices) idx = rng.uniform_int(static_cast<int64_t>(dataset.size()));
    if (cfg.flip_augment) {
      flips.assign(static_cast<size_t>(nb), 0);
      for (int64_t i = 0; i < nb; ++i) flips[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
    }
    const ImageBatch x0 = dataset.gather(indices, flips);
    for (auto& ti : t) ti = 1 + static_cast<int>(rng.uniform_int(cfg.T));
    const Tensor eps = rng.normal_tensor(x0.shape());
    const ImageBatch xt = q_sample(x0, t, eps, s);

    std::vector<ad::Var> leaves = net.make_leaves(params, true);
    Rng* dropout_rng = cfg.model.dropout > 0.0 ? &rng : nullptr;
    const DenoiserOutput out = net.forward(leaves, xt, t, dropout_rng);

    LossTerms terms;
    terms.simple = loss_simple(eps, out.eps_pred);
    if (cfg.model.learn_variance) terms.vlb = loss_vlb(x0, xt, t, out, s);
    if (pairwise) {
      // The source model runs in inference mode (no dropout) on the same
      // noised batch; its predictions act as constants.
      const DenoiserOutput src_out = net.forward(source_leaves, xt, t, nullptr);
      const ad::Var ada_x0 = predict_x0_from_eps(xt, t, out.eps_pred, s);
      const ad::Var src_x0 = predict_x0_from_eps(xt, t, src_out.eps_pred, s);
      terms.img = pairwise_sim_loss(src_x0, ada_x0);
      terms.hf = hf_pairwise_loss(src_x0, ada_x0);
      terms.hf_mse = hf_mse_loss(ada_x0, x0);
    }
    const ad::Var total = total_loss(terms, weights);

    StepLog row;
    row.iteration = iter + 1;
    row.l_simple = scalar(terms.simple);
    row.l_vlb = scalar(terms.vlb);
    row.l_img = scalar(terms.img);
    row.l_hf = scalar(terms.hf);
    row.l_hfmse = scalar(terms.hf_mse);
    row.total = total->value[0];
    if (!std::isfinite(row.total)) {
      std::ostringstream msg;
      msg << "training: non-finite loss at iteration " << row.iteration << " (l_simple="
          << row.l_simple << ", l_vlb=" << row.l_vlb << ", l_img=" << row.l_img
          << ", l_hf=" << row.l_hf << ", l_hfmse=" << row.l_hfmse << ")";
      throw std::runtime_error(msg.str());
    }

    ad::backward(total);
    opt.step(params, leaves);

    if (hooks.on_step) hooks.on_step(row);
    if (hooks.on_samples && cfg.sample_every > 0 && row.iteration % cfg.sample_every == 0) {
      const DenoiserModel model(net, params);
      hooks.on_samples(row.iteration,
                       sample_images(model, s, cfg.model.channels, cfg.model.image_size,
                                     cfg.model.image_size, cfg.sample_count,
                                     derive_seed(cfg.seed, static_cast<uint64_t>(row.iteration))));
    }
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        row.iteration % cfg.checkpoint_every == 0 && row.iteration < cfg.iterations) {
      hooks.on_checkpoint(snapshot(cfg, s, params, opt, rng, row.iteration));
    }
  }
  return snapshot(cfg, s, params, opt, rng, cfg.iterations);
}

}  // namespace

Checkpoint train_scratch(const TrainConfig& cfg, const Dataset& dataset,
                         const TrainHooks& hooks) {
  if (cfg.mode != TrainMode::kScratch) {
    throw std::invalid_argument("train_scratch: config mode must be 'scratch'");
  }
  validate(cfg);
  check_dataset(cfg, dataset);
  const Denoiser net(cfg.model);
  Rng init_rng(derive_seed(cfg.seed, 0x1717));
  Params params = net.init_params(init_rng);
  return run_loop(cfg, dataset, std::move(params), Adam({.lr = cfg.learning_rate}), Rng(cfg.seed),
                  0, nullptr, hooks);
}

Checkpoint adapt(const TrainConfig& cfg, const Checkpoint& source, const Dataset& dataset,
                 const TrainHooks& hooks) {
  if (cfg.mode == TrainMode::kScratch) {
    throw std::invalid_argument("adapt: config mode must be 'pa' or 'finetune'");
  }
  validate(cfg);
  check_dataset(cfg, dataset);
  if (!(source.config.model == cfg.model)) {
    throw std::invalid_argument("adapt: source checkpoint architecture does not match config");
  }
  // Adapted weights start as an exact copy of the frozen source weights.
  Params params = clone_params(source.params);
  return run_loop(cfg, dataset, std::move(params), Adam({.lr = cfg.learning_rate}), Rng(cfg.seed),
                  0, &source.params, hooks);
}

Checkpoint resume_training(const Checkpoint& state, const TrainConfig& cfg,
                           const Dataset& dataset, const TrainHooks& hooks,
                           const Checkpoint* source) {
  validate(cfg);
  check_dataset(cfg, dataset);
  if (!(state.config.model == cfg.model)) {
    throw std::invalid_argument("resume_training: checkpoint architecture mismatch");
  }
  if (state.iteration >= cfg.iterations) {
    throw std::invalid_argument("resume_training: checkpoint already at or past cfg.iterations");
  }
  Adam opt({.lr = cfg.learning_rate});
  opt.set_state(state.opt_state);
  Rng rng(0);
  rng.set_state(state.rng_state);
  const Params* source_params = nullptr;
  if (cfg.mode != TrainMode::kScratch) {
    if (!source) throw std::invalid_argument("resume_training: adaptation modes need a source");
    if (!(source->config.model == cfg.model)) {
      throw std::invalid_argument("resume_training: source architecture mismatch");
    }
    source_params = &source->params;
  }
  return run_loop(cfg, dataset, state.params, std::move(opt), rng, state.iteration,
                  source_params, hooks);
}

}  // namespace fsdiff

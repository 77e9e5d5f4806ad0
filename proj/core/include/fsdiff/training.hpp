// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <ostream>

#include "fsdiff/checkpoint.hpp"
#include "fsdiff/dataset.hpp"

namespace fsdiff {

/// One logged training step. Loss columns that a mode does not produce are
/// reported as 0 (e.g. the pairwise terms in scratch mode).
struct StepLog {
  int64_t iteration = 0;
  double l_simple = 0.0;
  double l_vlb = 0.0;
  double l_img = 0.0;
  double l_hf = 0.0;
  double l_hfmse = 0.0;
  double total = 0.0;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const Checkpoint&)> on_checkpoint;  // periodic snapshots
  std::function<void(int64_t iteration, const std::vector<Tensor>&)> on_samples;
};

/// Appends StepLog rows as CSV with a fixed header
/// `iteration,l_simple,l_vlb,l_img,l_hf,l_hfmse,total`; numbers are written
/// with round-trip precision so equal runs produce byte-identical logs.
class CsvLogger {
 public:
  explicit CsvLogger(std::ostream& out);
  void log(const StepLog& row);

 private:
  std::ostream& out_;
};

/// Trains a model from scratch on `dataset`. Every random draw (batch
/// indices, flips, timesteps, noise, dropout) comes from one generator
/// seeded with cfg.seed, in that per-step order; parameter initialization
/// uses a stream derived from the same seed.
Checkpoint train_scratch(const TrainConfig& cfg, const Dataset& dataset,
                         const TrainHooks& hooks = {});

/// Domain adaptation from a frozen source checkpoint. The adapted model
/// starts as an exact copy of the source weights. In pa mode, source and
/// adapted models see the same noised batch (identical t and eps per
/// element) and only the adapted parameters receive updates; finetune mode
/// is the same loop with the pairwise weights forced to zero.
Checkpoint adapt(const TrainConfig& cfg, const Checkpoint& source, const Dataset& dataset,
                 const TrainHooks& hooks = {});

/// Continues a run from a saved state up to cfg.iterations; a resumed run
/// is bit-identical to an uninterrupted one. `source` is required for
/// pa/finetune modes.
Checkpoint resume_training(const Checkpoint& state, const TrainConfig& cfg,
                           const Dataset& dataset, const TrainHooks& hooks = {},
                           const Checkpoint* source = nullptr);

}  // namespace fsdiff

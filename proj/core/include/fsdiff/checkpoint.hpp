// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "fsdiff/config.hpp"
#include "fsdiff/optimizer.hpp"
#include "fsdiff/rng.hpp"
#include "fsdiff/schedule.hpp"

namespace fsdiff {

/// Complete training state: loading one and continuing reproduces an
/// uninterrupted single-threaded run bit for bit.
struct Checkpoint {
  TrainConfig config;  // echo of the producing run
  NoiseSchedule schedule;
  Params params;
  Adam::State opt_state;
  Rng::State rng_state{};
  int64_t iteration = 0;
};

/// Single-file little-endian container: magic, format version, then
/// length-prefixed named sections (config, schedule, params, optimizer,
/// rng, meta). Writes are atomic (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws std::runtime_error on a corrupt file or version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and validates the architecture against `expected`; throws
/// std::runtime_error when e.g. image_size differs.
Checkpoint load_checkpoint_for(const std::filesystem::path& path, const DenoiserConfig& expected);

}  // namespace fsdiff

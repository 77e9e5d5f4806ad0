// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fsdiff/denoiser.hpp"
#include "fsdiff/pa_losses.hpp"

namespace fsdiff {

enum class TrainMode { kScratch, kFinetune, kPa };

TrainMode train_mode_from_string(const std::string& name);
std::string to_string(TrainMode mode);

/// Full description of a training run. `beta_start`/`beta_end` <= 0 select
/// the scaled defaults for the configured T.
struct TrainConfig {
  TrainMode mode = TrainMode::kScratch;
  int T = 1000;
  double beta_start = 0.0;
  double beta_end = 0.0;
  double learning_rate = 1e-4;  // 1e-3 is the alternative documented default
  int batch_size = 8;
  int iterations = 1000;
  uint64_t seed = 0;
  LossWeights weights;
  bool flip_augment = true;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int sample_every = 0;      // 0: no periodic sample grids
  int sample_count = 9;
  DenoiserConfig model;

  double resolved_beta_start() const;
  double resolved_beta_end() const;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

/// Flat key=value text round-trip ('#' starts a comment). Doubles are
/// written with enough digits to round-trip exactly.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values_file(const std::filesystem::path& path);
std::string serialize_key_values(const KeyValues& kv);

KeyValues to_key_values(const TrainConfig& cfg);
/// Unknown keys throw std::invalid_argument naming the key; missing keys
/// keep their defaults.
TrainConfig train_config_from_key_values(const KeyValues& kv);

std::string format_double(double v);

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "fsdiff/rng.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Families of procedurally generated toy images, used so tests and smoke
/// runs need no external data. `kBlobs` is smooth/low-frequency,
/// `kStripes` and `kChecker` carry strong high-frequency content.
enum class SyntheticStyle { kGradients, kBlobs, kStripes, kChecker, kMixed };

SyntheticStyle synthetic_style_from_string(const std::string& name);
std::string to_string(SyntheticStyle style);

/// One random image in [-1, 1], shape (channels, size, size).
Tensor synthetic_image(SyntheticStyle style, int64_t channels, int64_t size, Rng& rng);

/// Deterministic dataset for a given seed.
std::vector<Tensor> make_synthetic(SyntheticStyle style, int64_t channels, int64_t size,
                                   int count, uint64_t seed);

}  // namespace fsdiff

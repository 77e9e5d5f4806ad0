// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fsdiff/autodiff.hpp"
#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Single-level 2-d Haar sub-bands at half resolution, (N, C, H/2, W/2) each.
///
/// Convention: the first letter filters rows (vertical axis), the second
/// filters columns, with L = (1, 1)/sqrt(2) and H = (-1, 1)/sqrt(2). For a
/// 2x2 block [[a, b], [c, d]]:
///   ll = (a + b + c + d) / 2     lh = (-a + b - c + d) / 2
///   hl = (-a - b + c + d) / 2    hh = (a - b - c + d) / 2
/// The transform is orthonormal: energy is preserved exactly and
/// reconstruction is the exact inverse. The high-frequency sum lh + hl + hh
/// is invariant to swapping the lh/hl orientation convention.
struct FrequencyBands {
  Tensor ll, lh, hl, hh;
};

/// Decomposes a batch into the four Haar sub-bands. H and W must be even;
/// odd dimensions are rejected rather than padded.
FrequencyBands haar_decompose(const ImageBatch& x);

/// Exact inverse of haar_decompose.
ImageBatch haar_reconstruct(const FrequencyBands& b);

/// Elementwise lh + hl + hh at half resolution.
Tensor hf_sum(const FrequencyBands& b);

/// Differentiable composition hf_sum(haar_decompose(x)): one linear map per
/// 2x2 block, (-a - b - c + 3d) / 2.
ad::Var haar_hf(const ad::Var& x);

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Reads an 8-bit PNG as a (C, H, W) tensor with values in [-1, 1] via
/// v / 127.5 - 1. Grayscale files load as C = 1, color as C = 3 (alpha is
/// rejected). Throws std::runtime_error on decode failure.
Tensor read_png(const std::filesystem::path& path);

/// Writes a (C, H, W) tensor (C = 1 or 3) as an 8-bit PNG; values are
/// clamped to [-1, 1] and mapped back with round((v + 1) * 127.5).
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Tiles images (all of one shape) into a square-ish grid with `separator`
/// pixels of black between cells.
Tensor tile_grid(const std::vector<Tensor>& images, int separator = 2);

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// In-memory image dataset. Images are (C, H, W) tensors in [-1, 1]; all
/// entries share one shape.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Tensor> images);

  /// Loads every *.png under `dir` (non-recursive), sorted by filename so
  /// index order is reproducible. Throws std::runtime_error if the
  /// directory is missing or empty, std::invalid_argument on mixed shapes.
  static Dataset load_dir(const std::filesystem::path& dir);

  size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const Tensor& image(size_t i) const { return images_[i]; }
  const std::vector<Tensor>& images() const { return images_; }

  int64_t channels() const { return images_.empty() ? 0 : images_[0].dim(0); }
  int64_t height() const { return images_.empty() ? 0 : images_[0].dim(1); }
  int64_t width() const { return images_.empty() ? 0 : images_[0].dim(2); }

  /// Assembles a batch; flips[i] mirrors sample i horizontally. `flips`
  /// may be empty for no augmentation.
  ImageBatch gather(std::span<const int64_t> indices, std::span<const uint8_t> flips = {}) const;

 private:
  std::vector<Tensor> images_;
};

/// Horizontal mirror of a (C, H, W) image.
Tensor hflip(const Tensor& image);

}  // namespace fsdiff

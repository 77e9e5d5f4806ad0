// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/dataset.hpp"

#include <algorithm>
#include <stdexcept>

#include "fsdiff/image_io.hpp"

namespace fsdiff {

Dataset::Dataset(std::vector<Tensor> images) : images_(std::move(images)) {
  if (images_.empty()) throw std::invalid_argument("Dataset: empty image list");
  for (const Tensor& img : images_) {
    if (img.ndim() != 3) throw std::invalid_argument("Dataset: images must be (C,H,W)");
    check_same_shape(images_[0], img, "Dataset");
  }
}

Dataset Dataset::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("Dataset: no such directory: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) {
    throw std::invalid_argument("Dataset: no .png files in " + dir.string());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(read_png(f));
  return Dataset(std::move(images));
}

Tensor hflip(const Tensor& image) {
  if (image.ndim() != 3) throw std::invalid_argument("hflip: want (C,H,W)");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

ImageBatch Dataset::gather(std::span<const int64_t> indices, std::span<const uint8_t> flips) const {
  if (images_.empty()) throw std::runtime_error("Dataset::gather: empty dataset");
  if (!flips.empty() && flips.size() != indices.size()) {
    throw std::invalid_argument("Dataset::gather: flips size mismatch");
  }
  const int64_t n = static_cast<int64_t>(indices.size());
  const int64_t c = channels(), h = height(), w = width();
  ImageBatch batch({n, c, h, w});
  const int64_t stride = c * h * w;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= static_cast<int64_t>(images_.size())) {
      throw std::invalid_argument("Dataset::gather: index out of range");
    }
    const bool flip = !flips.empty() && flips[static_cast<size_t>(i)] != 0;
    const Tensor img = flip ? hflip(images_[static_cast<size_t>(idx)])
                            : images_[static_cast<size_t>(idx)];
    std::copy_n(img.data(), stride, batch.data() + i * stride);
  }
  return batch;
}

}  // namespace fsdiff

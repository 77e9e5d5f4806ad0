// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fsdiff {

/// Dense row-major n-dimensional array of doubles.
///
/// Value semantics throughout: copies are deep, moves are cheap. Image
/// batches follow the N x C x H x W layout with values nominally in [-1, 1].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-d accessor for image batches.
  double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Returns a copy with a new shape; element count must match.
  Tensor reshaped(std::vector<int64_t> shape) const;

  void fill(double value);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  std::string shape_str() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

/// An image batch is a 4-d tensor (N, C, H, W).
using ImageBatch = Tensor;

int64_t shape_numel(const std::vector<int64_t>& shape);

/// Throws std::invalid_argument unless `t` is 4-d with all dims positive.
void check_image_batch(const Tensor& t, const char* what);

/// Throws std::invalid_argument unless shapes match.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// FNV-1a over the raw bytes of shape and data; used for frozen-model checks.
uint64_t tensor_hash(const Tensor& t);

}  // namespace fsdiff

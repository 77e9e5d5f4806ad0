// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;

void fill_gradient(Tensor& img, int64_t ch, int64_t size, Rng& rng) {
  const double a = rng.uniform() * 1.0 - 0.5;
  const double bx = rng.uniform() * 1.6 - 0.8;
  const double by = rng.uniform() * 1.6 - 0.8;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(size - 1) - 0.5;
      const double fy = static_cast<double>(y) / static_cast<double>(size - 1) - 0.5;
      img[(ch * size + y) * size + x] = a + bx * fx + by * fy;
    }
}

void add_blob(Tensor& img, int64_t ch, int64_t size, Rng& rng) {
  const double cx = rng.uniform() * size;
  const double cy = rng.uniform() * size;
  const double rx = 0.1 * size + rng.uniform() * 0.25 * size;
  const double ry = 0.1 * size + rng.uniform() * 0.25 * size;
  const double amp = rng.uniform() * 2.0 - 1.0;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double dx = (static_cast<double>(x) - cx) / rx;
      const double dy = (static_cast<double>(y) - cy) / ry;
      img[(ch * size + y) * size + x] += amp * std::exp(-0.5 * (dx * dx + dy * dy));
    }
}

void fill_stripes(Tensor& img, int64_t ch, int64_t size, Rng& rng) {
  const double theta = rng.uniform() * kPi;
  const double cycles = 2.0 + rng.uniform() * 4.0;  // 2-6 periods across the image
  const double freq = 2.0 * kPi * cycles / static_cast<double>(size);
  const double phase = rng.uniform() * 2.0 * kPi;
  const double amp = 0.4 + rng.uniform() * 0.6;
  const double bias = rng.uniform() * 0.6 - 0.3;
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double u = cs * static_cast<double>(x) + sn * static_cast<double>(y);
      img[(ch * size + y) * size + x] = bias + amp * std::sin(freq * u + phase);
    }
}

void fill_checker(Tensor& img, int64_t ch, int64_t size, Rng& rng) {
  const int64_t cell = 2 + rng.uniform_int(3);  // 2-4 px cells
  const int64_t ox = rng.uniform_int(cell);
  const int64_t oy = rng.uniform_int(cell);
  const double hi = 0.3 + rng.uniform() * 0.7;
  const double lo = -0.3 - rng.uniform() * 0.7;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const bool on = (((x + ox) / cell) + ((y + oy) / cell)) % 2 == 0;
      img[(ch * size + y) * size + x] = on ? hi : lo;
    }
}

}  // namespace

SyntheticStyle synthetic_style_from_string(const std::string& name) {
  if (name == "gradients") return SyntheticStyle::kGradients;
  if (name == "blobs") return SyntheticStyle::kBlobs;
  if (name == "stripes") return SyntheticStyle::kStripes;
  if (name == "checker") return SyntheticStyle::kChecker;
  if (name == "mixed") return SyntheticStyle::kMixed;
  throw std::invalid_argument("unknown synthetic style: " + name);
}

std::string to_string(SyntheticStyle style) {
  switch (style) {
    case SyntheticStyle::kGradients: return "gradients";
    case SyntheticStyle::kBlobs: return "blobs";
    case SyntheticStyle::kStripes: return "stripes";
    case SyntheticStyle::kChecker: return "checker";
    case SyntheticStyle::kMixed: return "mixed";
  }
  return "unknown";
}

Tensor synthetic_image(SyntheticStyle style, int64_t channels, int64_t size, Rng& rng) {
  if (channels < 1 || size < 2) throw std::invalid_argument("synthetic_image: bad dims");
  if (style == SyntheticStyle::kMixed) {
    const SyntheticStyle pool[] = {SyntheticStyle::kGradients, SyntheticStyle::kBlobs,
                                   SyntheticStyle::kStripes, SyntheticStyle::kChecker};
    style = pool[rng.uniform_int(4)];
  }
  Tensor img({channels, size, size});
  for (int64_t ch = 0; ch < channels; ++ch) {
    switch (style) {
      case SyntheticStyle::kGradients:
        fill_gradient(img, ch, size, rng);
        break;
      case SyntheticStyle::kBlobs: {
        fill_gradient(img, ch, size, rng);
        const int64_t blobs = 1 + rng.uniform_int(3);
        for (int64_t i = 0; i < blobs; ++i) add_blob(img, ch, size, rng);
        break;
      }
      case SyntheticStyle::kStripes:
        fill_stripes(img, ch, size, rng);
        break;
      case SyntheticStyle::kChecker:
        fill_checker(img, ch, size, rng);
        break;
      case SyntheticStyle::kMixed:
        break;  // resolved above
    }
  }
  for (double& v : img.values()) v = std::clamp(v, -1.0, 1.0);
  return img;
}

std::vector<Tensor> make_synthetic(SyntheticStyle style, int64_t channels, int64_t size,
                                   int count, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_synthetic: count must be positive");
  Rng rng(seed);
  std::vector<Tensor> images;
  images.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) images.push_back(synthetic_image(style, channels, size, rng));
  return images;
}

}  // namespace fsdiff

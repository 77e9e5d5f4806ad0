// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "fsdiff/tensor.hpp"

namespace fsdiff {

/// Deterministic xoshiro256++ generator with a Box-Muller normal sampler.
///
/// Unlike the `<random>` distributions, every draw here is fully specified,
/// so sequences are reproducible across standard libraries and the complete
/// state (including the cached second normal) serializes exactly. All
/// training, sampling and initialization randomness flows through this type.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, n), n >= 1.
  int64_t uniform_int(int64_t n);

  /// Standard normal via Box-Muller; second value of each pair is cached.
  double normal();

  void fill_normal(Tensor& t);
  Tensor normal_tensor(std::vector<int64_t> shape);

  struct State {
    std::array<uint64_t, 4> s;
    bool has_spare;
    double spare;
  };
  State state() const { return {s_, has_spare_, spare_}; }
  void set_state(const State& st) {
    s_ = st.s;
    has_spare_ = st.has_spare;
    spare_ = st.spare;
  }

 private:
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 step; also used to derive independent stream seeds.
uint64_t splitmix64(uint64_t& state);

/// Derives a decorrelated child seed, e.g. for per-image sampling streams.
uint64_t derive_seed(uint64_t base, uint64_t index);

}  // namespace fsdiff

// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fsdiff;

TEST(Rng, DeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= a.next_u64() != c.next_u64();
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformRangeAndIntBounds) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const int64_t k = rng.uniform_int(7);
    ASSERT_GE(k, 0);
    ASSERT_LT(k, 7);
  }
  EXPECT_THROW(rng.uniform_int(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(var, 1.0, 0.02);
}

// The cached Box-Muller spare must survive a state round-trip, otherwise
// checkpoint resume would drift by one draw.
TEST(Rng, StateRoundTripMidPair) {
  Rng rng(3);
  (void)rng.normal();  // leaves a spare cached
  const Rng::State st = rng.state();
  Rng restored(999);
  restored.set_state(st);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(rng.normal(), restored.normal());
    EXPECT_EQ(rng.next_u64(), restored.next_u64());
  }
}

TEST(Rng, DerivedSeedsDecorrelated) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  Rng a(derive_seed(5, 0)), b(derive_seed(5, 1));
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

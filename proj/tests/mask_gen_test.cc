// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "oracles.h"
#include "sparsedit/errors.h"
#include "sparsedit/mask.h"

namespace sparsedit {
namespace {

DiffMap diff_from(std::vector<float> values, int64_t h, int64_t w) {
  DiffMap d;
  d.h = h;
  d.w = w;
  d.values = std::move(values);
  return d;
}

// Six-step lists where Y differs from X by `delta` inside an 8x8 patch.
void patch_sequences(std::vector<Tensor4>& xs, std::vector<Tensor4>& ys, int steps, float delta) {
  std::mt19937_64 rng(20);
  for (int t = 0; t < steps; ++t) {
    Tensor4 x = oracle::random_tensor(rng, 1, 4, 32, 32);
    Tensor4 y = x;
    for (int64_t c = 0; c < 4; ++c) {
      for (int64_t yy = 8; yy < 16; ++yy) {
        for (int64_t xx = 12; xx < 20; ++xx) y.at(0, c, yy, xx) += delta;
      }
    }
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }
}

TEST(BinaryMaskTest, ActiveCountTracksSets) {
  BinaryMask m(4, 5);
  EXPECT_TRUE(m.is_empty());
  m.set(1, 2, true);
  m.set(1, 2, true);
  m.set(3, 4, true);
  EXPECT_EQ(m.active_count(), 2);
  EXPECT_DOUBLE_EQ(m.sparsity(), 0.1);
  m.set(1, 2, false);
  EXPECT_EQ(m.active_count(), 1);
  EXPECT_EQ(m.active_indices(), (std::vector<int64_t>{19}));
  EXPECT_TRUE(BinaryMask::full(3, 3).is_full());
}

TEST(BinaryMaskTest, TensorRoundTrip) {
  std::mt19937_64 rng(21);
  const BinaryMask m = oracle::random_mask(rng, 9, 7, 0.4);
  EXPECT_EQ(BinaryMask::from_tensor(m.to_tensor()), m);
}

TEST(AccumulateDiffTest, IdenticalSequencesAreDegenerate) {
  std::vector<Tensor4> xs;
  std::vector<Tensor4> ys;
  patch_sequences(xs, ys, 10, 0.0f);
  const DiffMap d = accumulate_diff(xs, ys);
  EXPECT_TRUE(d.degenerate);
  for (float v : d.values) EXPECT_EQ(v, 0.0f);
}

TEST(AccumulateDiffTest, PatchNormalizesToOneInsideZeroOutside) {
  std::vector<Tensor4> xs;
  std::vector<Tensor4> ys;
  patch_sequences(xs, ys, 6, 0.2f);
  const DiffMap d = accumulate_diff(xs, ys, 1, 6);
  ASSERT_FALSE(d.degenerate);
  for (int64_t y = 0; y < 32; ++y) {
    for (int64_t x = 0; x < 32; ++x) {
      const bool inside = y >= 8 && y < 16 && x >= 12 && x < 20;
      // Float rounding of x + 0.2 varies slightly per pixel.
      if (inside) {
        EXPECT_NEAR(d.at(y, x), 1.0f, 1e-5) << y << "," << x;
      } else {
        EXPECT_EQ(d.at(y, x), 0.0f) << y << "," << x;
      }
    }
  }
}

TEST(AccumulateDiffTest, DefaultWindowIgnoresStepsOutsideFiveToTen) {
  std::vector<Tensor4> xs;
  std::vector<Tensor4> ys;
  patch_sequences(xs, ys, 10, 0.0f);
  // A difference at step 2 only lies outside the default window.
  ys[1].at(0, 0, 0, 0) += 1.0f;
  EXPECT_TRUE(accumulate_diff(xs, ys).degenerate);
  EXPECT_FALSE(accumulate_diff(xs, ys, 1, 10).degenerate);
}

TEST(AccumulateDiffTest, ChannelMeanOfAbsoluteDifference) {
  std::vector<Tensor4> xs(2, Tensor4(1, 2, 1, 3));
  std::vector<Tensor4> ys(2, Tensor4(1, 2, 1, 3));
  // Per step, channel means are 0.4, 0.1 and 0 for the three pixels.
  for (auto& y : ys) {
    y.at(0, 0, 0, 0) = 0.5f;
    y.at(0, 1, 0, 0) = -0.3f;
    y.at(0, 0, 0, 1) = 0.2f;
  }
  const DiffMap d = accumulate_diff(xs, ys, 1, 2);
  EXPECT_EQ(d.at(0, 0), 1.0f);
  EXPECT_NEAR(d.at(0, 1), 0.25f, 1e-6);
  EXPECT_EQ(d.at(0, 2), 0.0f);
}

TEST(AccumulateDiffTest, InvalidWindowsAndShapesThrow) {
  std::vector<Tensor4> xs;
  std::vector<Tensor4> ys;
  patch_sequences(xs, ys, 10, 0.1f);
  EXPECT_THROW(accumulate_diff(xs, ys, 0, 3), ContractViolation);
  EXPECT_THROW(accumulate_diff(xs, ys, 6, 5), ContractViolation);
  EXPECT_THROW(accumulate_diff(xs, ys, 5, 11), ContractViolation);
  EXPECT_THROW(accumulate_diff(std::span(xs).first(4), ys, 1, 5), ContractViolation);
  ys[6] = Tensor4(1, 4, 16, 16);
  EXPECT_THROW(accumulate_diff(xs, ys, 5, 10), ContractViolation);
}

TEST(OtsuTest, WorkedFourPixelExample) {
  const OtsuResult r = otsu_threshold(diff_from({0.1f, 0.2f, 0.8f, 0.9f}, 1, 4));
  EXPECT_EQ(r.status, MaskStatus::kEdit);
  // 0.25 * (0.7)^2 in exact arithmetic; the inputs are float-rounded.
  const double lo = (static_cast<double>(0.1f) + static_cast<double>(0.2f)) / 2;
  const double hi = (static_cast<double>(0.8f) + static_cast<double>(0.9f)) / 2;
  EXPECT_NEAR(r.objective, 0.25 * (hi - lo) * (hi - lo), 1e-12);
  EXPECT_NEAR(r.objective, 0.1225, 1e-7);
  EXPECT_EQ(r.mask.active_indices(), (std::vector<int64_t>{2, 3}));
  EXPECT_GT(r.epsilon, 0.2f);
  EXPECT_LE(r.epsilon, 0.8f);
}

TEST(OtsuTest, SymmetricBimodalMap) {
  std::vector<float> v(64);
  for (size_t i = 0; i < v.size(); ++i) v[i] = i % 2 == 0 ? 0.0f : 1.0f;
  const OtsuResult r = otsu_threshold(diff_from(v, 8, 8));
  EXPECT_NEAR(r.objective, 0.25, 1e-12);
  for (int64_t i = 0; i < 64; ++i) EXPECT_EQ(r.mask.get_flat(i), i % 2 == 1);
  // Every candidate in (0, 1) ties; the smallest wins.
  EXPECT_EQ(r.epsilon, 0.5f / 256.0f);
}

TEST(OtsuTest, DegenerateMapIsNoEdit) {
  DiffMap d = diff_from(std::vector<float>(16, 0.0f), 4, 4);
  d.degenerate = true;
  const OtsuResult r = otsu_threshold(d);
  EXPECT_EQ(r.status, MaskStatus::kNoEdit);
  EXPECT_EQ(r.epsilon, 1.0f);
  EXPECT_TRUE(r.mask.is_empty());
}

TEST(OtsuTest, MatchesExhaustiveSearchOnRandomMaps) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t h = 1 + trial % 13;
    const int64_t w = 2 + trial % 7;
    std::vector<float> v(static_cast<size_t>(h * w));
    if (trial % 2 == 0) {
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      for (float& x : v) x = u(rng);
    } else {
      std::normal_distribution<float> lo(0.2f, 0.05f);
      std::normal_distribution<float> hi(0.8f, 0.05f);
      std::bernoulli_distribution pick(0.3);
      for (float& x : v) x = std::clamp(pick(rng) ? hi(rng) : lo(rng), 0.0f, 1.0f);
    }
    v[0] = 0.0f;
    v[1] = 1.0f;
    const OtsuResult r = otsu_threshold(diff_from(v, h, w));
    const oracle::Otsu o = oracle::otsu(v);
    ASSERT_TRUE(o.found);
    EXPECT_EQ(r.epsilon, o.epsilon) << "trial " << trial;
    EXPECT_NEAR(r.objective, o.objective, 1e-12);
    EXPECT_EQ(r.mask, threshold_mask(diff_from(v, h, w), o.epsilon));
  }
}

TEST(OtsuTest, RaisingThresholdNeverAddsPixels) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(100);
  for (float& x : v) x = u(rng);
  const DiffMap d = diff_from(v, 10, 10);
  const auto grid = otsu_candidate_grid();
  ASSERT_EQ(grid.size(), 256u);
  BinaryMask prev = threshold_mask(d, grid[0]);
  for (size_t k = 1; k < grid.size(); ++k) {
    const BinaryMask cur = threshold_mask(d, grid[k]);
    for (int64_t i = 0; i < cur.pixels(); ++i) {
      if (cur.get_flat(i)) {
        EXPECT_TRUE(prev.get_flat(i));
      }
    }
    prev = cur;
  }
}

TEST(DilateTest, RadiusZeroIsIdentity) {
  std::mt19937_64 rng(24);
  const BinaryMask m = oracle::random_mask(rng, 11, 13, 0.2);
  EXPECT_EQ(dilate(m, 0), m);
}

TEST(DilateTest, SinglePixelGrowsToClippedSquare) {
  BinaryMask m(6, 6);
  m.set(3, 3, true);
  const BinaryMask d = dilate(m, 1);
  EXPECT_EQ(d.active_count(), 9);
  BinaryMask corner(6, 6);
  corner.set(0, 0, true);
  EXPECT_EQ(dilate(corner, 1).active_count(), 4);
}

TEST(DilateTest, MatchesOracleAndComposes) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask m = oracle::random_mask(rng, 5 + trial % 20, 3 + trial % 17, 0.05);
    const int radius = trial % 4;
    EXPECT_EQ(dilate(m, radius), oracle::dilate(m, radius));
    EXPECT_EQ(dilate(m, 2), dilate(dilate(m, 1), 1));
  }
}

TEST(PyramidTest, SinglePixelIndexArithmetic) {
  BinaryMask m(16, 16);
  m.set(5, 7, true);
  const MaskPyramid p = build_pyramid(m, 3);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.at(1).active_indices(), (std::vector<int64_t>{2 * 8 + 3}));
  EXPECT_EQ(p.at(2).active_indices(), (std::vector<int64_t>{1 * 4 + 1}));
}

TEST(PyramidTest, OrPoolingPropertiesOnRandomMasks) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 40; ++trial) {
    const BinaryMask m = oracle::random_mask(rng, 32, 64, 0.01 * trial);
    const MaskPyramid p = build_pyramid(m, 4);
    for (size_t l = 0; l + 1 < p.size(); ++l) {
      EXPECT_EQ(p.at(l + 1), oracle::or_pool(p.at(l)));
      EXPECT_GE(p.at(l + 1).sparsity(), p.at(l).sparsity());
    }
  }
  EXPECT_TRUE(build_pyramid(BinaryMask(16, 16), 3).at(2).is_empty());
  EXPECT_TRUE(build_pyramid(BinaryMask::full(16, 16), 3).at(2).is_full());
  EXPECT_THROW(build_pyramid(BinaryMask(12, 12), 4), ContractViolation);
}

TEST(SquareMaskTest, CenteredWithRequestedArea) {
  const BinaryMask m = square_mask(64, 64, 0.05);
  const int64_t side = std::llround(std::sqrt(0.05 * 4096));
  EXPECT_EQ(m.active_count(), side * side);
  EXPECT_TRUE(m.get(32, 32));
  EXPECT_FALSE(m.get(0, 0));
  EXPECT_TRUE(square_mask(64, 64, 1.0).is_full());
}

}  // namespace
}  // namespace sparsedit

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "oracles.h"
#include "sparsedit/errors.h"
#include "sparsedit/pipeline.h"
#include "test_config.h"

namespace sparsedit {
namespace {

using testing::small_config;

const PromptTokens kOld{{3, 14, 15, 92}};
const PromptTokens kNew{{3, 14, 77, 92}};

class EditTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    net_ = new UNet(small_config());
    base_ = new CacheStore();
    generate_dense(*net_, kOld, base_);
    regen_ = new Tensor4(generate_dense(*net_, kNew, nullptr));
  }
  static void TearDownTestSuite() {
    delete regen_;
    delete base_;
    delete net_;
  }

  static std::unique_ptr<CacheStore> fresh_store(CacheOptions opts = {}) { return base_->clone(opts); }

  static EditSession session(const PromptTokens& new_prompt = kNew) {
    EditSession s;
    s.old_prompt = kOld;
    s.new_prompt = new_prompt;
    s.t1 = 2;
    s.t2 = 4;
    return s;
  }

  static EditSession masked(const BinaryMask& m) {
    EditSession s = session();
    s.user_mask = m;
    return s;
  }

  static UNet* net_;
  static CacheStore* base_;
  static Tensor4* regen_;
};

UNet* EditTest::net_ = nullptr;
CacheStore* EditTest::base_ = nullptr;
Tensor4* EditTest::regen_ = nullptr;

bool equal_outside(const Tensor4& a, const Tensor4& b, const BinaryMask& m) {
  for (int64_t c = 0; c < a.c(); ++c) {
    for (int64_t i = 0; i < m.pixels(); ++i) {
      if (!m.get_flat(i) && a.plane(0, c)[i] != b.plane(0, c)[i]) return false;
    }
  }
  return true;
}

TEST_F(EditTest, IdenticalPromptsReturnTheCachedLatent) {
  auto store = fresh_store();
  const EditResult r = edit(*net_, session(kOld), *store);
  EXPECT_EQ(r.status, MaskStatus::kNoEdit);
  EXPECT_TRUE(r.mask.is_empty());
  EXPECT_EQ(r.macs.sparse_total(), 0);
  EXPECT_TRUE(bit_equal(r.latent, base_->get(step_latent_key(small_config().steps))));
}

TEST_F(EditTest, EmptyUserMaskReturnsTheCachedLatent) {
  auto store = fresh_store();
  const EditResult r = edit(*net_, masked(BinaryMask(32, 32)), *store);
  EXPECT_EQ(r.status, MaskStatus::kNoEdit);
  EXPECT_TRUE(bit_equal(r.latent, base_->get(step_latent_key(small_config().steps))));
}

TEST_F(EditTest, FullUserMaskEqualsDenseRegeneration) {
  auto store = fresh_store();
  const EditResult r = edit(*net_, masked(BinaryMask::full(32, 32)), *store);
  EXPECT_EQ(r.status, MaskStatus::kEdit);
  EXPECT_LE(max_abs_diff(r.latent, *regen_), 1e-3f);
}

TEST_F(EditTest, DetectedEditKeepsCachedPixelsOutsideTheMask) {
  auto store = fresh_store();
  const EditResult r = edit(*net_, session(), *store);
  ASSERT_EQ(r.status, MaskStatus::kEdit);
  EXPECT_FALSE(r.mask.is_empty());
  EXPECT_LT(r.otsu_epsilon, 1.0f);
  EXPECT_TRUE(equal_outside(r.latent, base_->get(step_latent_key(small_config().steps)), r.mask));
  EXPECT_TRUE(r.latent.all_finite());
}

TEST_F(EditTest, UserMasksKeepCachedPixelsOutsideTheMask) {
  std::mt19937_64 rng(80);
  const Tensor4 cached = base_->get(step_latent_key(small_config().steps));
  for (double f : {0.05, 0.2}) {
    const BinaryMask m = oracle::random_mask(rng, 32, 32, f);
    auto store = fresh_store();
    const EditResult r = edit(*net_, masked(m), *store);
    EXPECT_TRUE(equal_outside(r.latent, cached, m)) << f;
    EXPECT_FALSE(bit_equal(r.latent, cached)) << f;
  }
}

TEST_F(EditTest, OutputDoesNotDependOnBudgetOrTransferMode) {
  const BinaryMask m = square_mask(32, 32, 0.1);
  auto unlimited = fresh_store();
  const EditResult a = edit(*net_, masked(m), *unlimited);

  CacheOptions tight;
  tight.hot_budget_bytes = base_->stats().total_bytes / 4;
  auto constrained = fresh_store(tight);
  const EditResult b = edit(*net_, masked(m), *constrained);

  CacheOptions sync = tight;
  sync.async_transfers = false;
  auto synchronous = fresh_store(sync);
  const EditResult c = edit(*net_, masked(m), *synchronous);

  EXPECT_EQ(content_hash(a.latent), content_hash(b.latent));
  EXPECT_EQ(content_hash(a.latent), content_hash(c.latent));
  EXPECT_EQ(a.stats.transfers, 0u);
  EXPECT_GT(b.stats.transfers, 0u);
  EXPECT_LE(b.stats.hot_bytes, tight.hot_budget_bytes);
}

TEST_F(EditTest, ColdStoreWithPrefetchNeverBlocks) {
  const BinaryMask m = square_mask(32, 32, 0.1);
  auto store = fresh_store();
  store->spill_all();
  const EditResult r = edit(*net_, masked(m), *store);
  // Only the up-front lookup of the cached final latent waits on the cold
  // tier; every step's entries arrive through prefetch.
  EXPECT_EQ(r.stats.blocking_loads, 1u);
  EXPECT_GT(r.stats.prefetch_hits, 0u);
}

TEST_F(EditTest, SmallerMasksCostLessAndCompactLess) {
  auto s5 = fresh_store();
  auto s30 = fresh_store();
  const EditResult a = edit(*net_, masked(square_mask(32, 32, 0.05)), *s5);
  const EditResult b = edit(*net_, masked(square_mask(32, 32, 0.30)), *s30);
  EXPECT_GT(a.macs.ratio(), b.macs.ratio());
  EXPECT_GT(a.macs.ratio(), 1.0);
  EXPECT_EQ(a.cached_bytes_before, b.cached_bytes_before);
  EXPECT_GT(a.cached_bytes_after, b.cached_bytes_after);
  EXPECT_LT(a.cached_bytes_after, a.cached_bytes_before);
}

TEST_F(EditTest, EditIsDeterministic) {
  auto s1 = fresh_store();
  auto s2 = fresh_store();
  EXPECT_TRUE(bit_equal(edit(*net_, session(), *s1).latent, edit(*net_, session(), *s2).latent));
}

TEST_F(EditTest, IncompleteCacheFailsBeforeSparseWork) {
  CacheStore partial;
  const CacheKey dropped{small_config().steps, 3, CacheRole::kLayerOutput};
  for (const CacheEntry& e : base_->entries()) {
    if (e.key == dropped) continue;
    partial.put_payload(e.key, *base_->get_payload(e.key));
  }
  try {
    edit(*net_, masked(square_mask(32, 32, 0.1)), partial);
    FAIL() << "expected CacheMiss";
  } catch (const CacheMiss& e) {
    EXPECT_NE(std::string(e.what()).find(dropped.to_string()), std::string::npos) << e.what();
  }
  // Nothing was compacted.
  for (const CacheEntry& e : partial.entries()) EXPECT_FALSE(e.compacted);
}

TEST_F(EditTest, SessionValidation) {
  EditSession s = session();
  s.t1 = 0;
  EXPECT_THROW(s.validate(small_config()), ConfigError);
  s = session();
  s.t2 = small_config().steps + 1;
  EXPECT_THROW(s.validate(small_config()), ConfigError);
  s = session();
  s.t1 = 4;
  s.t2 = 3;
  EXPECT_THROW(s.validate(small_config()), ConfigError);
  s = session();
  s.new_prompt.ids.clear();
  EXPECT_THROW(s.validate(small_config()), ConfigError);
  EXPECT_THROW(masked(BinaryMask(16, 16)).validate(small_config()), ConfigError);
  EXPECT_NO_THROW(masked(BinaryMask(32, 32)).validate(small_config()));
}

TEST(DetectionTest, PatchDifferenceGivesTheDilatedPatch) {
  // X = 0 everywhere; Y = 1 inside an 8x8 patch at (20, 20) plus an 0.01 rim.
  std::vector<Tensor4> x;
  std::vector<Tensor4> y;
  BinaryMask patch(64, 64);
  for (int64_t r = 20; r < 28; ++r) {
    for (int64_t c = 20; c < 28; ++c) patch.set(r, c, true);
  }
  for (int t = 1; t <= 10; ++t) {
    x.emplace_back(Shape{1, 4, 64, 64});
    Tensor4 yt(Shape{1, 4, 64, 64});
    for (int64_t ch = 0; ch < 4; ++ch) {
      for (int64_t r = 0; r < 64; ++r) {
        for (int64_t c = 0; c < 64; ++c) {
          const bool rim = r >= 19 && r < 29 && c >= 19 && c < 29;
          yt.at(0, ch, r, c) = patch.get(r, c) ? 1.0f : (rim ? 0.01f : 0.0f);
        }
      }
    }
    y.push_back(std::move(yt));
  }
  const MaskDetection d = detect_mask_from_latents(x, y, 5, 10, 1);
  EXPECT_EQ(d.status, MaskStatus::kEdit);
  EXPECT_EQ(d.mask, oracle::dilate(patch, 1));

  const MaskDetection none = detect_mask_from_latents(x, x, 5, 10, 1);
  EXPECT_EQ(none.status, MaskStatus::kNoEdit);
  EXPECT_TRUE(none.mask.is_empty());
}

}  // namespace
}  // namespace sparsedit

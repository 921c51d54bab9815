// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include "oracles.h"
#include "sparsedit/cache_store.h"
#include "sparsedit/errors.h"

namespace sparsedit {
namespace {

namespace fs = std::filesystem;

CacheKey key(int64_t step, int64_t layer, CacheRole role = CacheRole::kLayerOutput) {
  return CacheKey{step, layer, role};
}

uint64_t dense_bytes(const Tensor4& t) { return serialized_size(CachePayload::dense(t)); }

void expect_conservation(const CacheStore& s) {
  const CacheStats st = s.stats();
  EXPECT_EQ(st.hot_bytes + st.cold_bytes, st.total_bytes);
  uint64_t sum = 0;
  uint64_t hot = 0;
  for (const CacheEntry& e : s.entries()) {
    sum += e.bytes;
    if (e.tier == Tier::kHot) hot += e.bytes;
  }
  EXPECT_EQ(sum, st.total_bytes);
  EXPECT_EQ(hot, st.hot_bytes);
}

TEST(CachePayloadTest, SerializationRoundTrip) {
  std::mt19937_64 rng(50);
  const CachePayload p = CachePayload::dense(oracle::random_tensor(rng, 1, 3, 4, 5));
  const auto bytes = serialize_payload(p);
  EXPECT_EQ(bytes.size(), serialized_size(p));
  const CachePayload back = deserialize_payload(bytes.data(), bytes.size());
  EXPECT_TRUE(bit_equal(back.expand(), p.expand()));
  EXPECT_THROW(deserialize_payload(bytes.data(), bytes.size() - 2), IoError);
}

TEST(CachePayloadTest, CompactionKeepsComplementLosslessly) {
  std::mt19937_64 rng(51);
  const Tensor4 t = oracle::random_tensor(rng, 2, 3, 8, 8);
  const BinaryMask m = oracle::random_mask(rng, 8, 8, 0.3);
  const CachePayload c = compact_payload(CachePayload::dense(t), m);
  ASSERT_TRUE(c.compacted);
  EXPECT_EQ(c.stored_pixels(), 64 - m.active_count());
  EXPECT_LT(serialized_size(c), serialized_size(CachePayload::dense(t)));
  const auto cov = c.coverage();
  const Tensor4 e = c.expand();
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      for (int64_t p = 0; p < 64; ++p) {
        EXPECT_EQ(cov[static_cast<size_t>(p)] != 0, !m.get_flat(p));
        EXPECT_EQ(e.plane(n, ch)[p], m.get_flat(p) ? 0.0f : t.plane(n, ch)[p]);
      }
    }
  }
  // Serialized compacted payloads survive too.
  const auto bytes = serialize_payload(c);
  EXPECT_TRUE(bit_equal(deserialize_payload(bytes.data(), bytes.size()).expand(), e));
  // Compacting again with a superset mask only removes more.
  BinaryMask bigger = m;
  bigger.set(0, 0, true);
  bigger.set(7, 7, true);
  EXPECT_LE(serialized_size(compact_payload(c, bigger)), serialized_size(c));
}

TEST(CacheStoreTest, PutGetRoundTripAndDuplicates) {
  std::mt19937_64 rng(52);
  CacheStore s;
  const Tensor4 t = oracle::random_tensor(rng, 1, 2, 3, 4);
  s.put(key(1, 0), t);
  EXPECT_TRUE(bit_equal(s.get(key(1, 0)), t));
  EXPECT_THROW(s.put(key(1, 0), t), ContractViolation);
  const Tensor4 u = oracle::random_tensor(rng, 1, 2, 6, 4);
  s.put(key(1, 0), u, true);
  EXPECT_TRUE(bit_equal(s.get(key(1, 0)), u));
  EXPECT_EQ(s.stats().total_bytes, dense_bytes(u));
  EXPECT_EQ(s.stats().transfers, 0u);
  try {
    s.get(key(2, 5, CacheRole::kNormVar));
    FAIL() << "expected CacheMiss";
  } catch (const CacheMiss& e) {
    EXPECT_NE(std::string(e.what()).find("norm_var"), std::string::npos) << e.what();
  }
}

TEST(CacheStoreTest, ColdRoundTripCountsTransfers) {
  std::mt19937_64 rng(53);
  CacheStore s;
  const Tensor4 a = oracle::random_tensor(rng, 1, 4, 8, 8);
  const Tensor4 b = oracle::random_tensor(rng, 1, 4, 8, 8);
  s.put(key(1, 0), a);
  s.put(key(2, 0), b);
  s.set_current_step(1);
  s.set_hot_budget(dense_bytes(a));
  EXPECT_EQ(s.stats().spills, 1u);
  expect_conservation(s);
  EXPECT_TRUE(bit_equal(s.get(key(2, 0)), b));
  const CacheStats st = s.stats();
  EXPECT_EQ(st.blocking_loads, 1u);
  EXPECT_EQ(st.loads, 1u);
  EXPECT_GE(st.transfers, 2u);
  expect_conservation(s);
}

TEST(CacheStoreTest, EvictionKeepsNearestStepsByPolicy) {
  // Eight equal-size entries for steps 1..8, current step 3, budget of four.
  // Oracle: rank by (behind current step, distance, bytes) and spill from the
  // top of that order until the budget holds.
  std::mt19937_64 rng(54);
  CacheStore s;
  uint64_t one = 0;
  for (int64_t t = 1; t <= 8; ++t) {
    const Tensor4 x = oracle::random_tensor(rng, 1, 2, 4, 4);
    one = dense_bytes(x);
    s.put(key(t, 0), x);
  }
  s.set_current_step(3);
  s.set_hot_budget(4 * one);
  std::vector<int64_t> hot;
  for (const CacheEntry& e : s.entries()) {
    if (e.tier == Tier::kHot) hot.push_back(e.key.step);
  }
  std::vector<std::pair<std::tuple<bool, int64_t>, int64_t>> order;
  for (int64_t t = 1; t <= 8; ++t) {
    const bool past = t < 3;
    order.push_back({{past, past ? 3 - t : t - 3}, t});
  }
  std::sort(order.begin(), order.end(), std::greater<>());
  std::vector<int64_t> want;
  for (size_t i = 4; i < order.size(); ++i) want.push_back(order[i].second);
  std::sort(want.begin(), want.end());
  EXPECT_EQ(hot, want);
  EXPECT_EQ(hot, (std::vector<int64_t>{3, 4, 5, 6}));
  expect_conservation(s);
}

TEST(CacheStoreTest, LargestEntryGoesFirstAtEqualDistance) {
  CacheStore s;
  const Tensor4 small(1, 1, 4, 4);
  const Tensor4 big(1, 1, 8, 8);
  s.put(key(5, 0), small);
  s.put(key(5, 1), big);
  s.set_current_step(1);
  // Both fit individually, not together.
  s.set_hot_budget(dense_bytes(big));
  for (const CacheEntry& e : s.entries()) {
    EXPECT_EQ(e.tier, e.key.layer_id == 1 ? Tier::kCold : Tier::kHot);
  }
}

TEST(CacheStoreTest, OversizedEntryStaysHotWithWarning) {
  CacheStore s;
  s.put(key(1, 0), Tensor4(1, 1, 16, 16));
  s.set_hot_budget(16);
  EXPECT_EQ(s.stats().hot_bytes, s.stats().total_bytes);
  EXPECT_GE(s.stats().oversize_warnings, 1u);
  EXPECT_EQ(s.stats().spills, 0u);
}

TEST(CacheStoreTest, UnlimitedBudgetNeverSpills) {
  std::mt19937_64 rng(55);
  CacheStore s;
  for (int64_t t = 0; t < 20; ++t) s.put(key(t, 0), oracle::random_tensor(rng, 1, 4, 8, 8));
  EXPECT_EQ(s.stats().cold_bytes, 0u);
  EXPECT_EQ(s.stats().spills, 0u);
}

CacheStore& two_step_cold_store(CacheStore& s, std::mt19937_64& rng) {
  for (int64_t t = 1; t <= 2; ++t) {
    for (int64_t l = 0; l < 4; ++l) s.put(key(t, l), oracle::random_tensor(rng, 1, 2, 8, 8));
  }
  s.spill_all();
  return s;
}

TEST(CacheStoreTest, PrefetchedStepHasNoBlockingLoads) {
  std::mt19937_64 rng(56);
  CacheStore s;
  two_step_cold_store(s, rng);
  s.set_current_step(1);
  s.prefetch(1);
  s.prefetch(2);
  for (int64_t l = 0; l < 4; ++l) s.get(key(1, l));
  s.set_current_step(2);
  s.prefetch(3);  // nothing there
  for (int64_t l = 0; l < 4; ++l) s.get(key(2, l));
  const CacheStats st = s.stats();
  EXPECT_EQ(st.blocking_loads, 0u);
  EXPECT_EQ(st.prefetch_hits, 8u);
  EXPECT_EQ(st.loads, 8u);
}

TEST(CacheStoreTest, SynchronousPrefetchGivesSameCounters) {
  std::mt19937_64 rng(56);
  CacheOptions opts;
  opts.async_transfers = false;
  CacheStore s(opts);
  two_step_cold_store(s, rng);
  s.prefetch(1);
  for (int64_t l = 0; l < 4; ++l) s.get(key(1, l));
  s.prefetch(2);
  for (int64_t l = 0; l < 4; ++l) s.get(key(2, l));
  EXPECT_EQ(s.stats().blocking_loads, 0u);
  EXPECT_EQ(s.stats().prefetch_hits, 8u);
}

TEST(CacheStoreTest, PrefetchOfHotOrMissingStepIsNoop) {
  CacheStore s;
  s.put(key(1, 0), Tensor4(1, 1, 2, 2));
  s.prefetch(1);
  s.prefetch(42);
  s.drain();
  EXPECT_EQ(s.stats().transfers, 0u);
  EXPECT_EQ(s.stats().prefetch_hits, 0u);
}

TEST(CacheStoreTest, SpillFileReopensWithEveryEntryCold) {
  std::mt19937_64 rng(57);
  const fs::path path = fs::temp_directory_path() / "sparsedit_reopen_test.spill";
  fs::remove(path);
  std::vector<Tensor4> tensors;
  {
    CacheOptions opts;
    opts.spill_path = path;
    opts.keep_spill_file = true;
    CacheStore s(opts);
    for (int64_t i = 0; i < 5; ++i) {
      tensors.push_back(oracle::random_tensor(rng, 1, 2, 3, 3));
      s.put(key(i, i % 2, CacheRole::kNormMean), tensors.back());
    }
    s.spill_all();
  }
  auto reopened = CacheStore::open_spill(path);
  EXPECT_EQ(reopened->stats().entries, 5u);
  EXPECT_EQ(reopened->stats().hot_bytes, 0u);
  for (int64_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(bit_equal(reopened->get(key(i, i % 2, CacheRole::kNormMean)),
                          tensors[static_cast<size_t>(i)]));
  }
  reopened.reset();
  fs::remove(path);
  EXPECT_THROW(CacheStore::open_spill(path), IoError);
}

TEST(CacheStoreTest, CompactionShrinksSpatialRolesOnly) {
  std::mt19937_64 rng(58);
  CacheStore s;
  s.put(key(1, 0), oracle::random_tensor(rng, 1, 4, 16, 16));
  s.put(key(1, 1), oracle::random_tensor(rng, 1, 8, 8, 8));  // one level down
  s.put(key(1, 2, CacheRole::kNormMean), oracle::random_tensor(rng, 1, 4, 1, 1));
  s.put(key(1, 3, CacheRole::kCrossAttnMap), oracle::random_tensor(rng, 1, 1, 256, 4));
  const Tensor4 level0 = s.get(key(1, 0));
  const Tensor4 level1 = s.get(key(1, 1));

  BinaryMask m(16, 16);
  for (int64_t y = 4; y < 8; ++y) {
    for (int64_t x = 4; x < 10; ++x) m.set(y, x, true);
  }
  const uint64_t before = s.stats().total_bytes;
  s.compact(m);
  EXPECT_LT(s.stats().total_bytes, before);
  for (const CacheEntry& e : s.entries()) {
    EXPECT_EQ(e.compacted, e.key.role == CacheRole::kLayerOutput) << e.key.to_string();
  }
  // Lossless where stored.
  const Tensor4 c0 = s.get(key(1, 0));
  for (int64_t p = 0; p < 256; ++p) {
    if (!m.get_flat(p)) {
      EXPECT_EQ(c0.plane(0, 2)[p], level0.plane(0, 2)[p]);
    }
  }
  const BinaryMask m1 = oracle::or_pool(m);
  const Tensor4 c1 = s.get(key(1, 1));
  for (int64_t p = 0; p < 64; ++p) {
    if (!m1.get_flat(p)) {
      EXPECT_EQ(c1.plane(0, 5)[p], level1.plane(0, 5)[p]);
    }
  }
  expect_conservation(s);
}

TEST(CacheStoreTest, CompactionBytesShrinkAsMaskGrows) {
  std::mt19937_64 rng(59);
  const Tensor4 t = oracle::random_tensor(rng, 1, 4, 32, 32);
  uint64_t prev = UINT64_MAX;
  BinaryMask m(32, 32);
  for (int step = 0; step < 8; ++step) {
    for (int64_t i = 0; i < 40; ++i) {
      m.set(std::uniform_int_distribution<int64_t>(0, 31)(rng),
            std::uniform_int_distribution<int64_t>(0, 31)(rng), true);
    }
    CacheStore s;
    s.put(key(1, 0), t);
    s.compact(m);
    EXPECT_LE(s.stats().total_bytes, prev);
    prev = s.stats().total_bytes;
  }
  CacheStore empty;
  empty.put(key(1, 0), t);
  const uint64_t full_bytes = empty.stats().total_bytes;
  empty.compact(BinaryMask(32, 32));
  EXPECT_EQ(empty.stats().total_bytes, full_bytes);
  CacheStore all;
  all.put(key(1, 0), t);
  all.compact(BinaryMask::full(32, 32));
  const Tensor4 cleared = all.get(key(1, 0));
  for (float v : cleared.data()) EXPECT_EQ(v, 0.0f);
}

// The first `rows` rows active: a region large enough that compaction pays
// for its run table.
BinaryMask rows_mask(int64_t h, int64_t w, int64_t rows) {
  BinaryMask m(h, w);
  for (int64_t y = 0; y < rows; ++y) {
    for (int64_t x = 0; x < w; ++x) m.set(y, x, true);
  }
  return m;
}

TEST(CacheStoreTest, SinglePixelOfATinyPlaneStaysDense) {
  CacheStore s;
  const Tensor4 t(1, 2, 8, 8, 1.0f);
  s.put(key(1, 0), t);
  BinaryMask m(8, 8);
  m.set(2, 2, true);
  s.compact(m);
  EXPECT_EQ(s.stats().total_bytes, dense_bytes(t));
  EXPECT_FALSE(s.entries()[0].compacted);
}

TEST(CacheStoreTest, ColdEntriesCompactToo) {
  std::mt19937_64 rng(60);
  CacheStore s;
  const Tensor4 t = oracle::random_tensor(rng, 1, 2, 8, 8);
  s.put(key(1, 0), t);
  s.spill_all();
  s.compact(rows_mask(8, 8, 3));
  EXPECT_LT(s.stats().cold_bytes, dense_bytes(t));
  const Tensor4 back = s.get(key(1, 0));
  EXPECT_EQ(back.at(0, 1, 2, 2), 0.0f);
  EXPECT_EQ(back.at(0, 1, 3, 3), t.at(0, 1, 3, 3));
}

TEST(CacheStoreTest, CloneIsIndependent) {
  std::mt19937_64 rng(61);
  CacheStore s;
  const Tensor4 a = oracle::random_tensor(rng, 1, 2, 8, 8);
  const Tensor4 b = oracle::random_tensor(rng, 1, 2, 8, 8);
  s.put(key(1, 0), a);
  s.put(key(2, 0), b);
  s.set_hot_budget(dense_bytes(a));
  auto copy = s.clone(CacheOptions{});
  copy->compact(rows_mask(8, 8, 3));
  EXPECT_TRUE(bit_equal(s.get(key(1, 0)), a));
  EXPECT_TRUE(bit_equal(s.get(key(2, 0)), b));
  EXPECT_EQ(copy->get(key(2, 0)).at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(copy->stats().cold_bytes, 0u);
}

TEST(BufferPoolTest, ReusesByShapeAndTracksPeak) {
  CacheStore s;
  Tensor4 a = s.acquire_buffer(Shape{1, 2, 4, 4});
  a.fill(3.0f);
  s.release_buffer(std::move(a));
  Tensor4 b = s.acquire_buffer(Shape{1, 2, 4, 4});
  EXPECT_EQ(s.stats().pool_reuses, 1u);
  for (float v : b.data()) EXPECT_EQ(v, 0.0f);
  Tensor4 c = s.acquire_buffer(Shape{1, 2, 4, 8});
  EXPECT_EQ(s.stats().pool_reuses, 1u);
  std::vector<Tensor4> held;
  for (int i = 0; i < 5; ++i) held.push_back(s.acquire_buffer(Shape{1, 1, 2, 2}));
  EXPECT_EQ(s.stats().pool_peak_outstanding, 7u);
  EXPECT_EQ(s.stats().pool_allocations, 7u);
}

TEST(CacheStoreTest, ConcurrentGetsDuringPrefetchSeeLastPut) {
  std::mt19937_64 rng(62);
  CacheOptions opts;
  opts.cold_latency = std::chrono::microseconds(200);
  CacheStore s(opts);
  std::vector<Tensor4> want;
  for (int64_t t = 0; t < 6; ++t) {
    for (int64_t l = 0; l < 6; ++l) {
      want.push_back(oracle::random_tensor(rng, 1, 2, 4, 4));
      s.put(key(t, l), want.back());
    }
  }
  s.spill_all();
  s.set_hot_budget(dense_bytes(want[0]) * 10);
  std::atomic<int> mismatches{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r) {
    readers.emplace_back([&, r] {
      for (int64_t t = 0; t < 6; ++t) {
        if (r == 0) s.prefetch(t);
        for (int64_t l = 0; l < 6; ++l) {
          if (!bit_equal(s.get(key(t, l)), want[static_cast<size_t>(t * 6 + l)])) ++mismatches;
        }
      }
    });
  }
  for (auto& th : readers) th.join();
  s.drain();
  EXPECT_EQ(mismatches.load(), 0);
  expect_conservation(s);
}

}  // namespace
}  // namespace sparsedit

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Activation cache for incremental regeneration.
//
// Entries are addressed by (step, layer, role) and live in exactly one of two
// tiers: hot (in memory) or cold (a spill file on local storage). When the hot
// tier exceeds its byte budget, entries are spilled farthest-from-use first:
// steps already behind the current step go before future ones, and among
// future steps the most distant goes first. prefetch() hands a step's cold
// entries to a background transfer agent so the compute loop rarely waits.
//
// Spill file layout, all integers little-endian:
//   record  := step:i64 layer:i64 role:i64 role:u8 length:u64 payload[length]
//   footer  := { step:i64 layer:i64 role:i64 offset:u64 length:u64 }*count
//              count:u64 "SPXIDX01"
// The footer is only present after write_index() / spill_all().

#ifndef SPARSEDIT_CACHE_STORE_H_
#define SPARSEDIT_CACHE_STORE_H_

#include <chrono>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "sparsedit/mask.h"
#include "sparsedit/tensor.h"

namespace sparsedit {

enum class CacheRole : uint8_t {
  kLayerOutput = 0,
  kNormMean = 1,
  kNormVar = 2,
  kCrossAttnMap = 3,
  kStepLatent = 4,
  kLayerInput = 5,
};

const char* role_name(CacheRole role);

struct CacheKey {
  int64_t step = 0;
  int64_t layer_id = 0;
  CacheRole role = CacheRole::kLayerOutput;

  std::string to_string() const;
  friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
};

// Immutable once stored. A compacted payload keeps only the pixels listed in
// `runs` (pairs of flat start index and length, ascending) for every
// (sample, channel) plane; values are sample -> channel -> stored pixel.
struct CachePayload {
  Shape shape;
  bool compacted = false;
  std::vector<uint32_t> runs;
  std::vector<float> values;

  static CachePayload dense(Tensor4 t);
  int64_t stored_pixels() const;
  // Full tensor; pixels a compacted payload does not store read as zero.
  Tensor4 expand() const;
  // Per-pixel flag: 1 if the payload holds this pixel.
  std::vector<uint8_t> coverage() const;
};

std::vector<uint8_t> serialize_payload(const CachePayload& p);
CachePayload deserialize_payload(const uint8_t* bytes, size_t len);
uint64_t serialized_size(const CachePayload& p);

// Keeps the pixels of `full` that are covered (coverage != 0) and not set in
// `recompute`. Falls back to the dense form when that is not smaller.
CachePayload compact_payload(const CachePayload& source, const BinaryMask& recompute);

enum class Tier { kHot, kCold };

struct CacheEntry {
  CacheKey key;
  uint64_t bytes = 0;
  Tier tier = Tier::kHot;
  bool compacted = false;
};

struct CacheStats {
  uint64_t hot_bytes = 0;
  uint64_t cold_bytes = 0;
  uint64_t total_bytes = 0;
  uint64_t entries = 0;
  uint64_t transfers = 0;       // records moved hot <-> cold
  uint64_t transfer_bytes = 0;
  uint64_t spills = 0;          // hot -> cold writes
  uint64_t loads = 0;           // cold -> hot reads
  uint64_t prefetch_hits = 0;
  uint64_t blocking_loads = 0;
  uint64_t pool_reuses = 0;
  uint64_t pool_allocations = 0;
  uint64_t pool_peak_outstanding = 0;
  uint64_t oversize_warnings = 0;
};

inline constexpr uint64_t kUnlimitedBudget = std::numeric_limits<uint64_t>::max();

struct CacheOptions {
  uint64_t hot_budget_bytes = kUnlimitedBudget;
  // Empty: a unique file under the system temp directory, removed on
  // destruction unless keep_spill_file is set.
  std::filesystem::path spill_path;
  bool keep_spill_file = false;
  int prefetch_horizon = 1;
  // false: prefetch() loads synchronously instead of using the agent.
  bool async_transfers = true;
  // Simulated per-load latency of the cold tier.
  std::chrono::microseconds cold_latency{0};
};

// Shape-keyed free list of feature-map buffers.
class BufferPool {
 public:
  // Zero-filled; reuses a released buffer of identical shape when available.
  Tensor4 acquire(const Shape& shape);
  void release(Tensor4&& buffer);

  uint64_t reuses() const;
  uint64_t allocations() const;
  uint64_t outstanding() const;
  uint64_t peak_outstanding() const;

 private:
  using Key = std::tuple<int64_t, int64_t, int64_t, int64_t>;
  mutable std::mutex mu_;
  std::map<Key, std::vector<std::vector<float>>> free_;
  uint64_t reuses_ = 0;
  uint64_t allocations_ = 0;
  uint64_t outstanding_ = 0;
  uint64_t peak_ = 0;
};

class CacheStore {
 public:
  explicit CacheStore(CacheOptions options = {});
  ~CacheStore();

  CacheStore(const CacheStore&) = delete;
  CacheStore& operator=(const CacheStore&) = delete;

  // Reopens a spill file written by spill_all(); every entry starts cold.
  static std::unique_ptr<CacheStore> open_spill(const std::filesystem::path& path,
                                                CacheOptions options = {});

  // Throws ContractViolation on a duplicate key unless `overwrite` is set.
  void put(const CacheKey& key, Tensor4 payload, bool overwrite = false);
  void put_payload(const CacheKey& key, CachePayload payload, bool overwrite = false);

  // Throws CacheMiss when absent.
  Tensor4 get(const CacheKey& key);
  std::shared_ptr<const CachePayload> get_payload(const CacheKey& key);
  bool contains(const CacheKey& key) const;

  // Queues every cold entry of `step` for promotion and returns immediately.
  void prefetch(int64_t step);
  // Blocks until no transfer is queued or in flight.
  void drain();

  void evict();
  void set_hot_budget(uint64_t bytes);
  void set_current_step(int64_t step);

  // Rewrites layer outputs/inputs to keep only pixels outside `mask` (taken at
  // each entry's resolution from the OR-pooled pyramid). No-op for an empty
  // mask.
  void compact(const BinaryMask& mask);

  Tensor4 acquire_buffer(const Shape& shape) { return pool_.acquire(shape); }
  void release_buffer(Tensor4&& buffer) { pool_.release(std::move(buffer)); }

  CacheStats stats() const;
  std::vector<CacheEntry> entries() const;
  const CacheOptions& options() const { return options_; }
  const std::filesystem::path& spill_path() const { return spill_path_; }

  // Moves every entry to the cold tier and writes the index footer.
  void spill_all();
  void write_index();

  // Independent store with the same contents; hot payloads are shared
  // (they are immutable), cold ones are read back.
  std::unique_ptr<CacheStore> clone(CacheOptions options) const;

 private:
  struct Slot {
    CacheKey key;
    std::shared_ptr<const CachePayload> payload;  // null while cold
    uint64_t bytes = 0;
    Tier tier = Tier::kHot;
    bool in_flight = false;
    bool prefetched = false;  // loaded by prefetch, not yet consumed
    bool file_valid = false;  // file copy matches payload
    uint64_t file_offset = 0;
  };

  void insert_locked(std::unique_lock<std::mutex>& lock, const CacheKey& key,
                     std::shared_ptr<const CachePayload> payload, bool overwrite);
  void evict_locked();
  void spill_slot_locked(Slot& slot);
  uint64_t append_record_locked(const CacheKey& key, const std::vector<uint8_t>& bytes);
  std::shared_ptr<const CachePayload> read_record(const CacheKey& key, uint64_t offset,
                                                  uint64_t length) const;
  std::shared_ptr<const CachePayload> load_slot(std::unique_lock<std::mutex>& lock, Slot& slot,
                                                bool from_prefetch);
  void wait_not_in_flight(std::unique_lock<std::mutex>& lock, const CacheKey& key);
  void ensure_file_locked();
  void agent_loop();

  CacheOptions options_;
  std::filesystem::path spill_path_;
  bool owns_spill_file_ = false;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<CacheKey, Slot> slots_;
  int64_t current_step_ = 0;
  uint64_t hot_bytes_ = 0;
  uint64_t cold_bytes_ = 0;
  CacheStats counters_;

  // File access; taken after mu_ when both are held.
  mutable std::mutex io_mu_;
  mutable std::fstream file_;
  uint64_t write_pos_ = 0;

  std::deque<CacheKey> queue_;
  size_t pending_ = 0;
  bool stop_ = false;
  std::thread agent_;

  BufferPool pool_;
};

}  // namespace sparsedit

#endif  // SPARSEDIT_CACHE_STORE_H_

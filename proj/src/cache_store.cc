// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/cache_store.h"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>

#include "sparsedit/errors.h"
#include "sparsedit/tensor_io.h"

namespace sparsedit {

namespace {

constexpr char kIndexMagic[8] = {'S', 'P', 'X', 'I', 'D', 'X', '0', '1'};
constexpr size_t kRecordHeader = 8 * 3 + 1 + 8;
constexpr size_t kIndexEntry = 8 * 5;
constexpr size_t kPayloadFixed = 32 + 1 + 8 + 8;

std::atomic<uint64_t> g_spill_counter{0};

std::filesystem::path temp_spill_path() {
  const auto id = g_spill_counter.fetch_add(1);
  return std::filesystem::temp_directory_path() /
         ("sparsedit-" + std::to_string(::getpid()) + "-" + std::to_string(id) + ".spill");
}

bool is_spatial_role(CacheRole role) {
  return role == CacheRole::kLayerOutput || role == CacheRole::kLayerInput;
}

void put_key(std::vector<uint8_t>& out, const CacheKey& key) {
  put_u64(out, static_cast<uint64_t>(key.step));
  put_u64(out, static_cast<uint64_t>(key.layer_id));
  put_u64(out, static_cast<uint64_t>(key.role));
}

CacheKey get_key(const uint8_t* p) {
  return CacheKey{static_cast<int64_t>(get_u64(p)), static_cast<int64_t>(get_u64(p + 8)),
                  static_cast<CacheRole>(get_u64(p + 16))};
}

BinaryMask or_pool(const BinaryMask& m) { return build_pyramid(m, 2).levels[1]; }

}  // namespace

const char* role_name(CacheRole role) {
  switch (role) {
    case CacheRole::kLayerOutput: return "layer_output";
    case CacheRole::kNormMean: return "norm_mean";
    case CacheRole::kNormVar: return "norm_var";
    case CacheRole::kCrossAttnMap: return "cross_attn_map";
    case CacheRole::kStepLatent: return "step_latent";
    case CacheRole::kLayerInput: return "layer_input";
  }
  return "unknown";
}

std::string CacheKey::to_string() const {
  return "(step " + std::to_string(step) + ", layer " + std::to_string(layer_id) + ", " +
         role_name(role) + ")";
}

// ---------------------------------------------------------------------------
// Payloads

CachePayload CachePayload::dense(Tensor4 t) {
  CachePayload p;
  p.shape = t.shape();
  p.values = std::move(t.storage());
  return p;
}

int64_t CachePayload::stored_pixels() const {
  if (!compacted) return shape.plane();
  int64_t total = 0;
  for (size_t i = 1; i < runs.size(); i += 2) total += runs[i];
  return total;
}

std::vector<uint8_t> CachePayload::coverage() const {
  std::vector<uint8_t> cov(static_cast<size_t>(shape.plane()), compacted ? 0 : 1);
  if (compacted) {
    for (size_t i = 0; i + 1 < runs.size(); i += 2) {
      std::fill_n(cov.begin() + runs[i], runs[i + 1], uint8_t{1});
    }
  }
  return cov;
}

Tensor4 CachePayload::expand() const {
  if (!compacted) return Tensor4(shape, values);
  Tensor4 out(shape);
  size_t v = 0;
  for (int64_t n = 0; n < shape.n; ++n) {
    for (int64_t c = 0; c < shape.c; ++c) {
      float* dst = out.plane(n, c);
      for (size_t i = 0; i + 1 < runs.size(); i += 2) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(v), runs[i + 1], dst + runs[i]);
        v += runs[i + 1];
      }
    }
  }
  return out;
}

uint64_t serialized_size(const CachePayload& p) {
  return kPayloadFixed + 4 * p.runs.size() + 4 * p.values.size();
}

std::vector<uint8_t> serialize_payload(const CachePayload& p) {
  std::vector<uint8_t> out;
  out.reserve(serialized_size(p));
  put_u64(out, static_cast<uint64_t>(p.shape.n));
  put_u64(out, static_cast<uint64_t>(p.shape.c));
  put_u64(out, static_cast<uint64_t>(p.shape.h));
  put_u64(out, static_cast<uint64_t>(p.shape.w));
  out.push_back(p.compacted ? 1 : 0);
  put_u64(out, p.runs.size());
  for (uint32_t r : p.runs) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(r >> (8 * i)));
  }
  put_u64(out, p.values.size());
  for (float v : p.values) put_f32(out, v);
  return out;
}

CachePayload deserialize_payload(const uint8_t* bytes, size_t len) {
  auto need = [&](size_t at, size_t n) {
    if (at + n > len) throw IoError("truncated cache payload");
  };
  CachePayload p;
  need(0, 41);
  p.shape = Shape{static_cast<int64_t>(get_u64(bytes)), static_cast<int64_t>(get_u64(bytes + 8)),
                  static_cast<int64_t>(get_u64(bytes + 16)),
                  static_cast<int64_t>(get_u64(bytes + 24))};
  p.compacted = bytes[32] != 0;
  size_t at = 33;
  const uint64_t runs = get_u64(bytes + at);
  at += 8;
  need(at, 4 * runs);
  p.runs.resize(runs);
  for (uint64_t i = 0; i < runs; ++i, at += 4) {
    p.runs[i] = static_cast<uint32_t>(bytes[at]) | (static_cast<uint32_t>(bytes[at + 1]) << 8) |
                (static_cast<uint32_t>(bytes[at + 2]) << 16) |
                (static_cast<uint32_t>(bytes[at + 3]) << 24);
  }
  need(at, 8);
  const uint64_t count = get_u64(bytes + at);
  at += 8;
  need(at, 4 * count);
  p.values.resize(count);
  for (uint64_t i = 0; i < count; ++i, at += 4) p.values[i] = get_f32(bytes + at);
  if (at != len) throw IoError("trailing bytes after cache payload");
  const int64_t expect = p.shape.n * p.shape.c * p.stored_pixels();
  if (static_cast<int64_t>(count) != expect) {
    throw IoError("cache payload value count " + std::to_string(count) + " does not match " +
                  p.shape.to_string());
  }
  return p;
}

CachePayload compact_payload(const CachePayload& source, const BinaryMask& recompute) {
  if (recompute.h() != source.shape.h || recompute.w() != source.shape.w) {
    throw ContractViolation("compaction mask does not match payload " + source.shape.to_string());
  }
  std::vector<uint8_t> keep = source.coverage();
  for (int64_t i = 0; i < recompute.pixels(); ++i) {
    if (recompute.get_flat(i)) keep[static_cast<size_t>(i)] = 0;
  }

  CachePayload out;
  out.shape = source.shape;
  out.compacted = true;
  std::vector<int64_t> kept;
  for (int64_t i = 0; i < source.shape.plane(); ++i) {
    if (!keep[static_cast<size_t>(i)]) continue;
    kept.push_back(i);
    if (!out.runs.empty() && out.runs[out.runs.size() - 2] + out.runs.back() == i) {
      ++out.runs.back();
    } else {
      out.runs.push_back(static_cast<uint32_t>(i));
      out.runs.push_back(1);
    }
  }
  const uint64_t values = static_cast<uint64_t>(source.shape.n * source.shape.c) * kept.size();
  if (serialized_size(out) + 4 * values >= serialized_size(source)) return source;

  const Tensor4 full = source.expand();
  out.values.reserve(values);
  for (int64_t n = 0; n < source.shape.n; ++n) {
    for (int64_t c = 0; c < source.shape.c; ++c) {
      const float* src = full.plane(n, c);
      for (int64_t i : kept) out.values.push_back(src[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// BufferPool

Tensor4 BufferPool::acquire(const Shape& shape) {
  std::lock_guard<std::mutex> lock(mu_);
  ++outstanding_;
  peak_ = std::max(peak_, outstanding_);
  auto it = free_.find(Key{shape.n, shape.c, shape.h, shape.w});
  if (it != free_.end() && !it->second.empty()) {
    std::vector<float> data = std::move(it->second.back());
    it->second.pop_back();
    ++reuses_;
    std::fill(data.begin(), data.end(), 0.0f);
    return Tensor4(shape, std::move(data));
  }
  ++allocations_;
  return Tensor4(shape);
}

void BufferPool::release(Tensor4&& buffer) {
  const Shape s = buffer.shape();
  std::lock_guard<std::mutex> lock(mu_);
  if (outstanding_ > 0) --outstanding_;
  free_[Key{s.n, s.c, s.h, s.w}].push_back(std::move(buffer.storage()));
  buffer = Tensor4();
}

uint64_t BufferPool::reuses() const {
  std::lock_guard<std::mutex> lock(mu_);
  return reuses_;
}

uint64_t BufferPool::allocations() const {
  std::lock_guard<std::mutex> lock(mu_);
  return allocations_;
}

uint64_t BufferPool::outstanding() const {
  std::lock_guard<std::mutex> lock(mu_);
  return outstanding_;
}

uint64_t BufferPool::peak_outstanding() const {
  std::lock_guard<std::mutex> lock(mu_);
  return peak_;
}

// ---------------------------------------------------------------------------
// CacheStore

CacheStore::CacheStore(CacheOptions options) : options_(std::move(options)) {
  if (options_.spill_path.empty()) {
    spill_path_ = temp_spill_path();
    owns_spill_file_ = !options_.keep_spill_file;
  } else {
    spill_path_ = options_.spill_path;
    owns_spill_file_ = false;
  }
  if (options_.prefetch_horizon < 0) throw ConfigError("prefetch horizon must be >= 0");
}

CacheStore::~CacheStore() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (agent_.joinable()) agent_.join();
  std::lock_guard<std::mutex> io(io_mu_);
  if (file_.is_open()) file_.close();
  if (owns_spill_file_) {
    std::error_code ec;
    std::filesystem::remove(spill_path_, ec);
  }
}

std::unique_ptr<CacheStore> CacheStore::open_spill(const std::filesystem::path& path,
                                                   CacheOptions options) {
  options.spill_path = path;
  options.keep_spill_file = true;
  auto store = std::make_unique<CacheStore>(std::move(options));

  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot open spill file " + path.string() + ": " + ec.message());
  std::lock_guard<std::mutex> io(store->io_mu_);
  store->file_.open(path, std::ios::in | std::ios::out | std::ios::binary);
  if (!store->file_) throw IoError("cannot open spill file " + path.string());
  if (size < 16) throw IoError(path.string() + ": spill file has no index footer");

  uint8_t tail[16];
  store->file_.seekg(static_cast<std::streamoff>(size - 16));
  store->file_.read(reinterpret_cast<char*>(tail), 16);
  if (!store->file_ || std::memcmp(tail + 8, kIndexMagic, 8) != 0) {
    throw IoError(path.string() + ": spill file has no index footer");
  }
  const uint64_t count = get_u64(tail);
  if (count * kIndexEntry + 16 > size) throw IoError(path.string() + ": corrupt spill index");
  const uint64_t index_start = size - 16 - count * kIndexEntry;
  std::vector<uint8_t> index(count * kIndexEntry);
  store->file_.seekg(static_cast<std::streamoff>(index_start));
  store->file_.read(reinterpret_cast<char*>(index.data()), static_cast<std::streamsize>(index.size()));
  if (!store->file_) throw IoError(path.string() + ": short read of spill index");

  for (uint64_t i = 0; i < count; ++i) {
    const uint8_t* e = index.data() + i * kIndexEntry;
    Slot slot;
    slot.key = get_key(e);
    slot.file_offset = get_u64(e + 24);
    slot.bytes = get_u64(e + 32);
    slot.tier = Tier::kCold;
    slot.file_valid = true;
    store->cold_bytes_ += slot.bytes;
    store->slots_.emplace(slot.key, std::move(slot));
  }
  store->write_pos_ = index_start;
  return store;
}

void CacheStore::ensure_file_locked() {
  if (file_.is_open()) return;
  file_.open(spill_path_, std::ios::in | std::ios::out | std::ios::binary | std::ios::trunc);
  if (!file_) throw IoError("cannot create spill file " + spill_path_.string());
  write_pos_ = 0;
}

uint64_t CacheStore::append_record_locked(const CacheKey& key, const std::vector<uint8_t>& bytes) {
  std::vector<uint8_t> header;
  put_key(header, key);
  header.push_back(static_cast<uint8_t>(key.role));
  put_u64(header, bytes.size());

  std::lock_guard<std::mutex> io(io_mu_);
  ensure_file_locked();
  const uint64_t offset = write_pos_;
  file_.seekp(static_cast<std::streamoff>(offset));
  file_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  file_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!file_) throw IoError("write to spill file " + spill_path_.string() + " failed");
  write_pos_ += header.size() + bytes.size();
  return offset;
}

std::shared_ptr<const CachePayload> CacheStore::read_record(const CacheKey& key, uint64_t offset,
                                                            uint64_t length) const {
  std::vector<uint8_t> buf(kRecordHeader + length);
  {
    std::lock_guard<std::mutex> io(io_mu_);
    file_.seekg(static_cast<std::streamoff>(offset));
    file_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!file_) {
      file_.clear();
      throw IoError("short read of " + key.to_string() + " from " + spill_path_.string());
    }
  }
  if (get_key(buf.data()) != key || buf[24] != static_cast<uint8_t>(key.role) ||
      get_u64(buf.data() + 25) != length) {
    throw IoError("spill record at offset " + std::to_string(offset) + " is not " +
                  key.to_string());
  }
  return std::make_shared<const CachePayload>(
      deserialize_payload(buf.data() + kRecordHeader, length));
}

void CacheStore::wait_not_in_flight(std::unique_lock<std::mutex>& lock, const CacheKey& key) {
  cv_.wait(lock, [&] {
    auto it = slots_.find(key);
    return it == slots_.end() || !it->second.in_flight;
  });
}

void CacheStore::insert_locked(std::unique_lock<std::mutex>& lock, const CacheKey& key,
                               std::shared_ptr<const CachePayload> payload, bool overwrite) {
  wait_not_in_flight(lock, key);
  auto it = slots_.find(key);
  if (it != slots_.end()) {
    if (!overwrite) throw ContractViolation("cache key " + key.to_string() + " already present");
    (it->second.tier == Tier::kHot ? hot_bytes_ : cold_bytes_) -= it->second.bytes;
    slots_.erase(it);
  }
  Slot slot;
  slot.key = key;
  slot.bytes = serialized_size(*payload);
  slot.payload = std::move(payload);
  slot.tier = Tier::kHot;
  hot_bytes_ += slot.bytes;
  slots_.emplace(key, std::move(slot));
  evict_locked();
}

void CacheStore::put(const CacheKey& key, Tensor4 payload, bool overwrite) {
  put_payload(key, CachePayload::dense(std::move(payload)), overwrite);
}

void CacheStore::put_payload(const CacheKey& key, CachePayload payload, bool overwrite) {
  auto shared = std::make_shared<const CachePayload>(std::move(payload));
  std::unique_lock<std::mutex> lock(mu_);
  insert_locked(lock, key, std::move(shared), overwrite);
}

std::shared_ptr<const CachePayload> CacheStore::load_slot(std::unique_lock<std::mutex>& lock,
                                                          Slot& slot, bool from_prefetch) {
  const CacheKey key = slot.key;
  const uint64_t offset = slot.file_offset;
  const uint64_t length = slot.bytes;
  lock.unlock();
  std::shared_ptr<const CachePayload> payload;
  try {
    payload = read_record(key, offset, length);
    if (options_.cold_latency.count() > 0) std::this_thread::sleep_for(options_.cold_latency);
  } catch (...) {
    lock.lock();
    slot.in_flight = false;
    cv_.notify_all();
    throw;
  }
  lock.lock();
  slot.payload = payload;
  slot.tier = Tier::kHot;
  slot.in_flight = false;
  slot.prefetched = from_prefetch;
  cold_bytes_ -= slot.bytes;
  hot_bytes_ += slot.bytes;
  ++counters_.loads;
  ++counters_.transfers;
  counters_.transfer_bytes += slot.bytes;
  cv_.notify_all();
  evict_locked();
  return payload;
}

std::shared_ptr<const CachePayload> CacheStore::get_payload(const CacheKey& key) {
  std::unique_lock<std::mutex> lock(mu_);
  for (;;) {
    auto it = slots_.find(key);
    if (it == slots_.end()) throw CacheMiss("cache miss for " + key.to_string());
    Slot& slot = it->second;
    if (slot.tier == Tier::kHot) {
      if (slot.prefetched) {
        slot.prefetched = false;
        ++counters_.prefetch_hits;
      }
      return slot.payload;
    }
    if (slot.in_flight) {
      wait_not_in_flight(lock, key);
      continue;
    }
    slot.in_flight = true;
    ++counters_.blocking_loads;
    // Under a tight budget the slot may be spilled again right away; the
    // payload just read is still the one to return.
    return load_slot(lock, slot, false);
  }
}

Tensor4 CacheStore::get(const CacheKey& key) { return get_payload(key)->expand(); }

bool CacheStore::contains(const CacheKey& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  return slots_.count(key) != 0;
}

void CacheStore::prefetch(int64_t step) {
  std::unique_lock<std::mutex> lock(mu_);
  std::vector<CacheKey> keys;
  for (auto it = slots_.lower_bound(CacheKey{step, std::numeric_limits<int64_t>::min(),
                                             CacheRole::kLayerOutput});
       it != slots_.end() && it->first.step == step; ++it) {
    if (it->second.tier == Tier::kCold && !it->second.in_flight) keys.push_back(it->first);
  }
  if (keys.empty()) return;

  if (options_.async_transfers) {
    for (const CacheKey& k : keys) {
      slots_.at(k).in_flight = true;
      queue_.push_back(k);
      ++pending_;
    }
    if (!agent_.joinable()) agent_ = std::thread([this] { agent_loop(); });
    cv_.notify_all();
    return;
  }
  for (const CacheKey& k : keys) {
    auto it = slots_.find(k);
    if (it == slots_.end() || it->second.tier != Tier::kCold || it->second.in_flight) continue;
    it->second.in_flight = true;
    load_slot(lock, it->second, true);
  }
}

void CacheStore::agent_loop() {
  std::unique_lock<std::mutex> lock(mu_);
  for (;;) {
    cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
    if (stop_) return;
    const CacheKey key = queue_.front();
    queue_.pop_front();
    auto it = slots_.find(key);
    if (it != slots_.end() && it->second.in_flight && it->second.tier == Tier::kCold) {
      try {
        load_slot(lock, it->second, true);
      } catch (const std::exception&) {
        // The slot is back to cold and not in flight; a later get() retries
        // synchronously and surfaces the error to the caller.
      }
    }
    --pending_;
    cv_.notify_all();
  }
}

void CacheStore::drain() {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return pending_ == 0; });
}

void CacheStore::spill_slot_locked(Slot& slot) {
  if (!slot.file_valid) {
    const auto bytes = serialize_payload(*slot.payload);
    slot.file_offset = append_record_locked(slot.key, bytes);
    slot.file_valid = true;
    ++counters_.spills;
    ++counters_.transfers;
    counters_.transfer_bytes += slot.bytes;
  }
  slot.payload.reset();
  slot.prefetched = false;
  slot.tier = Tier::kCold;
  hot_bytes_ -= slot.bytes;
  cold_bytes_ += slot.bytes;
}

void CacheStore::evict_locked() {
  const uint64_t budget = options_.hot_budget_bytes;
  if (hot_bytes_ <= budget) return;

  std::vector<Slot*> candidates;
  for (auto& [key, slot] : slots_) {
    if (slot.tier == Tier::kHot && !slot.in_flight) candidates.push_back(&slot);
  }
  const int64_t now = current_step_;
  auto rank = [now](const Slot* s) {
    const bool past = s->key.step < now;
    const int64_t distance = past ? now - s->key.step : s->key.step - now;
    return std::make_tuple(past, distance, s->bytes, s->key);
  };
  std::sort(candidates.begin(), candidates.end(),
            [&](const Slot* a, const Slot* b) { return rank(a) > rank(b); });

  for (Slot* slot : candidates) {
    if (hot_bytes_ <= budget) break;
    if (slot->bytes > budget) {
      ++counters_.oversize_warnings;
      continue;
    }
    spill_slot_locked(*slot);
  }
}

void CacheStore::evict() {
  std::lock_guard<std::mutex> lock(mu_);
  evict_locked();
}

void CacheStore::set_hot_budget(uint64_t bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  options_.hot_budget_bytes = bytes;
  evict_locked();
}

void CacheStore::set_current_step(int64_t step) {
  std::lock_guard<std::mutex> lock(mu_);
  current_step_ = step;
}

void CacheStore::compact(const BinaryMask& mask) {
  if (mask.is_empty()) return;
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return pending_ == 0; });

  std::vector<BinaryMask> levels{mask};
  auto level_for = [&](const Shape& s) -> const BinaryMask* {
    for (size_t l = 0;; ++l) {
      if (l == levels.size()) {
        const BinaryMask& last = levels.back();
        if (last.h() % 2 != 0 || last.w() % 2 != 0 || last.h() < 2 || last.w() < 2) return nullptr;
        levels.push_back(or_pool(last));
      }
      const BinaryMask& m = levels[l];
      if (m.h() == s.h && m.w() == s.w) return &m;
      if (m.h() < s.h || m.w() < s.w) return nullptr;
    }
  };

  for (auto& [key, slot] : slots_) {
    if (!is_spatial_role(key.role)) continue;
    std::shared_ptr<const CachePayload> source =
        slot.tier == Tier::kHot ? slot.payload : read_record(key, slot.file_offset, slot.bytes);
    const BinaryMask* level = level_for(source->shape);
    if (level == nullptr) continue;
    auto compacted = std::make_shared<const CachePayload>(compact_payload(*source, *level));
    const uint64_t bytes = serialized_size(*compacted);
    if (bytes == slot.bytes && compacted->compacted == source->compacted) continue;

    if (slot.tier == Tier::kHot) {
      hot_bytes_ = hot_bytes_ - slot.bytes + bytes;
      slot.payload = std::move(compacted);
      slot.file_valid = false;
    } else {
      ++counters_.loads;
      ++counters_.transfers;
      counters_.transfer_bytes += slot.bytes;
      slot.file_offset = append_record_locked(key, serialize_payload(*compacted));
      ++counters_.spills;
      ++counters_.transfers;
      counters_.transfer_bytes += bytes;
      cold_bytes_ = cold_bytes_ - slot.bytes + bytes;
    }
    slot.bytes = bytes;
  }
}

CacheStats CacheStore::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  CacheStats s = counters_;
  s.hot_bytes = hot_bytes_;
  s.cold_bytes = cold_bytes_;
  s.total_bytes = hot_bytes_ + cold_bytes_;
  s.entries = slots_.size();
  s.pool_reuses = pool_.reuses();
  s.pool_allocations = pool_.allocations();
  s.pool_peak_outstanding = pool_.peak_outstanding();
  return s;
}

std::vector<CacheEntry> CacheStore::entries() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<CacheEntry> out;
  out.reserve(slots_.size());
  for (const auto& [key, slot] : slots_) {
    const bool compacted = slot.payload ? slot.payload->compacted : false;
    out.push_back(CacheEntry{key, slot.bytes, slot.tier, compacted});
  }
  return out;
}

void CacheStore::write_index() {
  std::vector<uint8_t> footer;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [key, slot] : slots_) {
      if (!slot.file_valid) {
        throw ContractViolation("write_index: " + key.to_string() + " has no spill record");
      }
      put_key(footer, key);
      put_u64(footer, slot.file_offset);
      put_u64(footer, slot.bytes);
    }
    put_u64(footer, slots_.size());
    footer.insert(footer.end(), std::begin(kIndexMagic), std::end(kIndexMagic));
  }
  std::lock_guard<std::mutex> io(io_mu_);
  ensure_file_locked();
  file_.seekp(static_cast<std::streamoff>(write_pos_));
  file_.write(reinterpret_cast<const char*>(footer.data()), static_cast<std::streamsize>(footer.size()));
  file_.flush();
  if (!file_) throw IoError("writing spill index to " + spill_path_.string() + " failed");
  std::filesystem::resize_file(spill_path_, write_pos_ + footer.size());
}

void CacheStore::spill_all() {
  {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return pending_ == 0; });
    for (auto& [key, slot] : slots_) {
      if (slot.tier == Tier::kHot) spill_slot_locked(slot);
    }
  }
  write_index();
}

std::unique_ptr<CacheStore> CacheStore::clone(CacheOptions options) const {
  auto copy = std::make_unique<CacheStore>(std::move(options));
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return pending_ == 0; });
  std::unique_lock<std::mutex> dst(copy->mu_);
  for (const auto& [key, slot] : slots_) {
    Slot s;
    s.key = key;
    s.bytes = slot.bytes;
    s.payload = slot.tier == Tier::kHot ? slot.payload
                                        : read_record(key, slot.file_offset, slot.bytes);
    s.tier = Tier::kHot;
    copy->hot_bytes_ += s.bytes;
    copy->slots_.emplace(key, std::move(s));
  }
  copy->current_step_ = current_step_;
  copy->evict_locked();
  return copy;
}

}  // namespace sparsedit

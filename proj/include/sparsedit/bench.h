// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Config/session files, edit-size sweeps and the JSON/CSV reports the CLI
// emits. Schemas are documented in README.md.

#ifndef SPARSEDIT_BENCH_H_
#define SPARSEDIT_BENCH_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsedit/cache_store.h"
#include "sparsedit/pipeline.h"
#include "sparsedit/unet.h"

namespace sparsedit {

using Json = nlohmann::json;

// Throws ConfigError on unknown keys or invalid values.
UNetConfig config_from_json(const Json& j);
Json config_to_json(const UNetConfig& config);
// 16 hex digits of FNV-1a over the canonical JSON form.
std::string config_hash(const UNetConfig& config);

UNetConfig load_config(const std::filesystem::path& path);

struct SessionFile {
  UNetConfig config;
  EditSession session;
  uint64_t hot_budget_bytes = kUnlimitedBudget;
  int prefetch_horizon = 1;
  // Relative paths are resolved against the session file's directory.
  std::optional<std::filesystem::path> user_mask_path;
  std::optional<std::filesystem::path> cache_path;
};

SessionFile load_session(const std::filesystem::path& path);

// PGM (any non-zero pixel is active) or FT4 fixture (value > 0.5 is active).
BinaryMask load_mask(const std::filesystem::path& path);

struct BenchRecord {
  std::string config_hash;
  double target_size = 0.0;
  double edit_size = 0.0;  // realised mask sparsity
  int64_t dense_macs = 0;
  int64_t sparse_macs = 0;
  double macs_ratio = 0.0;
  double dense_ms = 0.0;
  double sparse_ms = 0.0;
  double speedup = 0.0;
  uint64_t cached_bytes_pre = 0;
  uint64_t cached_bytes_post = 0;
  uint64_t transfer_bytes = 0;
  uint64_t blocking_loads = 0;

  // Fills macs_ratio and speedup from the raw fields.
  void derive_ratios();
};

struct BenchReport {
  std::vector<BenchRecord> records;

  Json to_json() const;
  // Recomputes every ratio and throws ConfigError if a stored one differs by
  // more than 1e-9.
  static BenchReport from_json(const Json& j);
};

struct SweepOptions {
  std::vector<double> sizes;
  int warmup_runs = 1;
  int timed_runs = 5;
  CacheOptions cache;  // for the per-run clone of the base store
};

// One row per size: a centered square user mask of that sparsity, edited on
// a fresh clone of `base`. The dense time is the median full regeneration of
// the new prompt, measured once.
BenchReport run_sweep(const UNet& net, const EditSession& session, const CacheStore& base,
                      const SweepOptions& options);

// Header plus one row per record, columns:
// edit_size,dense_macs,sparse_macs,macs_ratio,dense_ms,sparse_ms,speedup,cached_bytes,transfer_bytes
void write_csv(std::ostream& out, const BenchReport& report);

Json stats_to_json(const CacheStats& stats);
Json plan_to_json(const GatherPlan& plan);
Json macs_to_json(const MacsReport& macs);

}  // namespace sparsedit

#endif  // SPARSEDIT_BENCH_H_

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "sparsedit/errors.h"
#include "sparsedit/tensor_io.h"

namespace sparsedit {

namespace {

namespace fs = std::filesystem;

const std::set<std::string> kConfigKeys = {"latent_h", "latent_w",     "latent_channels",
                                           "channels", "groups",       "text_dim",
                                           "steps",    "gate_fraction", "seed",
                                           "norm_eps"};
const std::set<std::string> kSessionKeys = {"old_tokens",     "new_tokens",       "t1",
                                            "t2",             "user_mask",        "hot_budget_bytes",
                                            "dilation_radius", "prefetch_horizon", "cache"};

template <typename T>
T field(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

Json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

PromptTokens tokens(const Json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  return PromptTokens{field<std::vector<int64_t>>(j, key, {})};
}

bool ratio_matches(double stored, double recomputed) {
  if (std::isinf(stored) || std::isinf(recomputed)) return stored == recomputed;
  return std::fabs(stored - recomputed) <= 1e-9;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Fn>
double time_ms(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count();
}

double safe_ratio(double num, double den) {
  if (den == 0.0) return num == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

}  // namespace

UNetConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.contains(key) && !kSessionKeys.contains(key)) {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }
  UNetConfig c;
  c.latent_h = field(j, "latent_h", c.latent_h);
  c.latent_w = field(j, "latent_w", c.latent_w);
  c.latent_channels = field(j, "latent_channels", c.latent_channels);
  c.channels = field(j, "channels", c.channels);
  c.groups = field(j, "groups", c.groups);
  c.text_dim = field(j, "text_dim", c.text_dim);
  c.steps = field(j, "steps", c.steps);
  c.gate_fraction = field(j, "gate_fraction", c.gate_fraction);
  c.seed = field(j, "seed", c.seed);
  c.norm_eps = field(j, "norm_eps", c.norm_eps);
  c.validate();
  return c;
}

Json config_to_json(const UNetConfig& c) {
  return Json{{"latent_h", c.latent_h},   {"latent_w", c.latent_w},
              {"latent_channels", c.latent_channels},
              {"channels", c.channels},   {"groups", c.groups},
              {"text_dim", c.text_dim},   {"steps", c.steps},
              {"gate_fraction", c.gate_fraction},
              {"seed", c.seed},           {"norm_eps", c.norm_eps}};
}

std::string config_hash(const UNetConfig& config) {
  const std::string canon = config_to_json(config).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

UNetConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return config_from_json(read_json(path));
}

SessionFile load_session(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("session file not found: " + path.string());
  const Json j = read_json(path);
  SessionFile s;
  s.config = config_from_json(j);
  s.session.old_prompt = tokens(j, "old_tokens");
  s.session.new_prompt = tokens(j, "new_tokens");
  s.session.t1 = field(j, "t1", s.session.t1);
  s.session.t2 = field(j, "t2", s.session.t2);
  s.session.dilation_radius = field(j, "dilation_radius", s.session.dilation_radius);
  s.hot_budget_bytes = field(j, "hot_budget_bytes", s.hot_budget_bytes);
  s.prefetch_horizon = field(j, "prefetch_horizon", s.prefetch_horizon);
  if (s.prefetch_horizon < 0) throw ConfigError("prefetch_horizon must be >= 0");
  const fs::path base = path.parent_path();
  if (j.contains("user_mask")) s.user_mask_path = base / field<std::string>(j, "user_mask", "");
  if (j.contains("cache")) s.cache_path = base / field<std::string>(j, "cache", "");
  if (s.user_mask_path) s.session.user_mask = load_mask(*s.user_mask_path);
  s.session.validate(s.config);
  return s;
}

BinaryMask load_mask(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("mask file not found: " + path.string());
  const bool pgm = path.extension() == ".pgm";
  const Tensor4 t = pgm ? read_pgm(path) : read_tensor(path);
  if (t.n() != 1 || t.c() != 1) {
    throw ConfigError(path.string() + ": mask must have one sample and one channel");
  }
  BinaryMask m(t.h(), t.w());
  for (int64_t y = 0; y < t.h(); ++y) {
    for (int64_t x = 0; x < t.w(); ++x) {
      const float v = t.at(0, 0, y, x);
      m.set(y, x, pgm ? v > 0.0f : v > 0.5f);
    }
  }
  return m;
}

void BenchRecord::derive_ratios() {
  macs_ratio = safe_ratio(static_cast<double>(dense_macs), static_cast<double>(sparse_macs));
  speedup = safe_ratio(dense_ms, sparse_ms);
}

// JSON has no infinity; a null ratio stands for it.
Json ratio_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json BenchReport::to_json() const {
  Json rows = Json::array();
  for (const BenchRecord& r : records) {
    rows.push_back(Json{{"config_hash", r.config_hash},
                        {"target_size", r.target_size},
                        {"edit_size", r.edit_size},
                        {"dense_macs", r.dense_macs},
                        {"sparse_macs", r.sparse_macs},
                        {"macs_ratio", ratio_json(r.macs_ratio)},
                        {"dense_ms", r.dense_ms},
                        {"sparse_ms", r.sparse_ms},
                        {"speedup", ratio_json(r.speedup)},
                        {"cached_bytes_pre", r.cached_bytes_pre},
                        {"cached_bytes_post", r.cached_bytes_post},
                        {"transfer_bytes", r.transfer_bytes},
                        {"blocking_loads", r.blocking_loads}});
  }
  return Json{{"records", rows}};
}

BenchReport BenchReport::from_json(const Json& j) {
  BenchReport report;
  try {
    for (const Json& row : j.at("records")) {
      BenchRecord r;
      r.config_hash = row.at("config_hash").get<std::string>();
      r.target_size = row.at("target_size").get<double>();
      r.edit_size = row.at("edit_size").get<double>();
      r.dense_macs = row.at("dense_macs").get<int64_t>();
      r.sparse_macs = row.at("sparse_macs").get<int64_t>();
      r.dense_ms = row.at("dense_ms").get<double>();
      r.sparse_ms = row.at("sparse_ms").get<double>();
      r.cached_bytes_pre = row.at("cached_bytes_pre").get<uint64_t>();
      r.cached_bytes_post = row.at("cached_bytes_post").get<uint64_t>();
      r.transfer_bytes = row.at("transfer_bytes").get<uint64_t>();
      r.blocking_loads = row.at("blocking_loads").get<uint64_t>();
      r.derive_ratios();
      auto stored = [&](const char* key) {
        const Json& v = row.at(key);
        return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
      };
      if (!ratio_matches(stored("macs_ratio"), r.macs_ratio) ||
          !ratio_matches(stored("speedup"), r.speedup)) {
        throw ConfigError("report row for edit size " + std::to_string(r.edit_size) +
                          " has inconsistent ratios");
      }
      report.records.push_back(std::move(r));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed bench report: ") + e.what());
  }
  return report;
}

BenchReport run_sweep(const UNet& net, const EditSession& session, const CacheStore& base,
                      const SweepOptions& options) {
  if (options.sizes.empty()) throw ConfigError("sweep needs at least one edit size");
  if (options.timed_runs < 1 || options.warmup_runs < 0) {
    throw ConfigError("sweep needs >= 1 timed run and >= 0 warmup runs");
  }
  for (double s : options.sizes) {
    if (!(s > 0.0 && s <= 1.0)) {
      throw ConfigError("edit sizes must lie in (0, 1], got " + std::to_string(s));
    }
  }
  const UNetConfig& cfg = net.config();
  const std::string hash = config_hash(cfg);

  std::vector<double> dense_times;
  for (int i = 0; i < options.warmup_runs + options.timed_runs; ++i) {
    const double ms = time_ms([&] { generate_dense(net, session.new_prompt, nullptr); });
    if (i >= options.warmup_runs) dense_times.push_back(ms);
  }
  const double dense_ms = median(dense_times);

  BenchReport report;
  for (double size : options.sizes) {
    EditSession s = session;
    s.user_mask = square_mask(cfg.latent_h, cfg.latent_w, size);
    std::vector<double> times;
    EditResult last;
    for (int i = 0; i < options.warmup_runs + options.timed_runs; ++i) {
      std::unique_ptr<CacheStore> store = base.clone(options.cache);
      const double ms = time_ms([&] { last = edit(net, s, *store); });
      if (i >= options.warmup_runs) times.push_back(ms);
    }
    BenchRecord r;
    r.config_hash = hash;
    r.target_size = size;
    r.edit_size = last.mask.sparsity();
    r.dense_macs = last.macs.dense_total();
    r.sparse_macs = last.macs.sparse_total();
    r.dense_ms = dense_ms;
    r.sparse_ms = median(times);
    r.cached_bytes_pre = last.cached_bytes_before;
    r.cached_bytes_post = last.cached_bytes_after;
    r.transfer_bytes = last.stats.transfer_bytes;
    r.blocking_loads = last.stats.blocking_loads;
    r.derive_ratios();
    report.records.push_back(std::move(r));
  }
  return report;
}

void write_csv(std::ostream& out, const BenchReport& report) {
  out << "edit_size,dense_macs,sparse_macs,macs_ratio,dense_ms,sparse_ms,speedup,cached_bytes,"
         "transfer_bytes\n";
  char buf[256];
  for (const BenchRecord& r : report.records) {
    std::snprintf(buf, sizeof buf, "%.6f,%lld,%lld,%.6f,%.3f,%.3f,%.3f,%llu,%llu\n", r.edit_size,
                  static_cast<long long>(r.dense_macs), static_cast<long long>(r.sparse_macs),
                  r.macs_ratio, r.dense_ms, r.sparse_ms, r.speedup,
                  static_cast<unsigned long long>(r.cached_bytes_post),
                  static_cast<unsigned long long>(r.transfer_bytes));
    out << buf;
  }
}

Json stats_to_json(const CacheStats& s) {
  return Json{{"hot_bytes", s.hot_bytes},
              {"cold_bytes", s.cold_bytes},
              {"total_bytes", s.total_bytes},
              {"entries", s.entries},
              {"transfers", s.transfers},
              {"transfer_bytes", s.transfer_bytes},
              {"spills", s.spills},
              {"loads", s.loads},
              {"prefetch_hits", s.prefetch_hits},
              {"blocking_loads", s.blocking_loads},
              {"pool_reuses", s.pool_reuses},
              {"pool_allocations", s.pool_allocations},
              {"pool_peak_outstanding", s.pool_peak_outstanding},
              {"oversize_warnings", s.oversize_warnings}};
}

Json plan_to_json(const GatherPlan& p) {
  return Json{{"block", {p.block_h, p.block_w}},
              {"tile", {p.tile_h, p.tile_w}},
              {"plane", {p.plane_h, p.plane_w}},
              {"tiles", p.origins.size()},
              {"cost", p.cost}};
}

Json macs_to_json(const MacsReport& macs) {
  Json layers = Json::array();
  for (const LayerMacs& l : macs.records()) {
    layers.push_back(Json{{"layer", l.layer_id},
                          {"kind", l.kind},
                          {"gated", l.gated},
                          {"dense_macs", l.dense_macs},
                          {"sparse_macs", l.sparse_macs}});
  }
  const double ratio = macs.ratio();
  return Json{{"dense_total", macs.dense_total()},
              {"sparse_total", macs.sparse_total()},
              {"ratio", std::isinf(ratio) ? Json(nullptr) : Json(ratio)},
              {"layers", layers}};
}

}  // namespace sparsedit

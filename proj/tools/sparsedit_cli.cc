// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// sparsedit: generate / edit / sweep driver.
//
// Exit status: 0 success, 1 internal or cache error, 2 usage or config error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsedit/bench.h"
#include "sparsedit/errors.h"
#include "sparsedit/pipeline.h"
#include "sparsedit/tensor_io.h"

namespace fs = std::filesystem;
using namespace sparsedit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("short write to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// The previous generation: the session's spill file if it names one, else a
// fresh dense run of the old prompt.
std::unique_ptr<CacheStore> base_store(const UNet& net, const SessionFile& s,
                                       const CacheOptions& options) {
  if (s.cache_path) {
    // Clone so compaction never touches the file on disk.
    auto opened = CacheStore::open_spill(*s.cache_path);
    return opened->clone(options);
  }
  auto store = std::make_unique<CacheStore>(options);
  generate_dense(net, s.session.old_prompt, store.get());
  return store;
}

struct GenerateArgs {
  std::string config;
  std::vector<int64_t> prompt;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const UNetConfig cfg = load_config(a.config);
  const UNet net(cfg);
  ensure_dir(a.out);
  const fs::path out(a.out);

  CacheOptions opts;
  opts.spill_path = out / "cache.spill";
  opts.keep_spill_file = true;
  std::error_code ec;
  fs::remove(opts.spill_path, ec);
  CacheStore store(opts);
  const Tensor4 final_latent = generate_dense(net, PromptTokens{a.prompt}, &store);

  ensure_dir(out / "latents");
  Json steps = Json::array();
  for (int t = 1; t <= cfg.steps; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%03d.ft4", t);
    const Tensor4 latent = store.get(step_latent_key(t));
    write_tensor(out / "latents" / name, latent);
    steps.push_back(Json{{"step", t},
                         {"file", std::string("latents/") + name},
                         {"hash", hex64(content_hash(latent))}});
  }
  write_tensor(out / "final_latent.ft4", final_latent);
  store.spill_all();

  write_json(out / "manifest.json",
             Json{{"config", config_to_json(cfg)},
                  {"config_hash", config_hash(cfg)},
                  {"prompt", a.prompt},
                  {"final_latent", "final_latent.ft4"},
                  {"final_hash", hex64(content_hash(final_latent))},
                  {"cache", "cache.spill"},
                  {"cache_entries", store.stats().entries},
                  {"cache_bytes", store.stats().total_bytes},
                  {"step_latents", steps}});
  std::cout << "generated " << cfg.steps << " steps -> " << out.string() << "\n";
  return kExitOk;
}

struct EditArgs {
  std::string session;
  std::string out;
  std::string user_mask;
  uint64_t hot_budget = 0;
  bool hot_budget_set = false;
  bool no_sparse = false;
};

int cmd_edit(const EditArgs& a) {
  SessionFile s = load_session(a.session);
  if (!a.user_mask.empty()) s.session.user_mask = load_mask(a.user_mask);
  if (a.hot_budget_set) s.hot_budget_bytes = a.hot_budget;
  s.session.validate(s.config);
  const UNet net(s.config);
  ensure_dir(a.out);
  const fs::path out(a.out);

  Json report;
  BenchRecord rec;
  rec.config_hash = config_hash(s.config);
  Tensor4 latent;
  BinaryMask mask;
  if (a.no_sparse) {
    const auto start = std::chrono::steady_clock::now();
    latent = generate_dense(net, s.session.new_prompt, nullptr);
    rec.dense_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             start).count();
    mask = s.session.user_mask ? *s.session.user_mask
                               : BinaryMask::full(s.config.latent_h, s.config.latent_w);
    report["mode"] = "dense";
  } else {
    CacheOptions opts;
    opts.prefetch_horizon = s.prefetch_horizon;
    auto store = base_store(net, s, opts);
    if (s.hot_budget_bytes != kUnlimitedBudget) {
      store->set_hot_budget(s.hot_budget_bytes);
    }
    const auto start = std::chrono::steady_clock::now();
    EditResult r = edit(net, s.session, *store);
    rec.sparse_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              start).count();
    latent = std::move(r.latent);
    mask = r.mask.pixels() > 0 ? r.mask : BinaryMask(s.config.latent_h, s.config.latent_w);
    rec.dense_macs = r.macs.dense_total();
    rec.sparse_macs = r.macs.sparse_total();
    rec.cached_bytes_pre = r.cached_bytes_before;
    rec.cached_bytes_post = r.cached_bytes_after;
    rec.transfer_bytes = r.stats.transfer_bytes;
    rec.blocking_loads = r.stats.blocking_loads;
    report["mode"] = "sparse";
    report["status"] = r.status == MaskStatus::kEdit ? "edit" : "no_edit";
    report["mask_source"] = r.user_mask ? "user" : "detected";
    report["otsu_epsilon"] = r.otsu_epsilon;
    report["macs"] = macs_to_json(r.macs);
    report["cache"] = stats_to_json(r.stats);
    Json plans = Json::array();
    for (const GatherPlan& p : r.plans) plans.push_back(plan_to_json(p));
    report["plans"] = plans;
  }
  rec.edit_size = mask.sparsity();
  rec.target_size = rec.edit_size;
  rec.derive_ratios();

  write_tensor(out / "edited_latent.ft4", latent);
  write_pgm(out / "mask.pgm", mask.to_tensor());
  report["config_hash"] = rec.config_hash;
  report["latent_hash"] = hex64(content_hash(latent));
  report["mask_active"] = mask.active_count();
  report["records"] = BenchReport{{rec}}.to_json().at("records");
  write_json(out / "report.json", report);
  std::cout << "edit (" << report["mode"].get<std::string>() << ") latent "
            << report["latent_hash"].get<std::string>() << " -> " << out.string() << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string session;
  std::vector<double> sizes;
  std::string out;
  std::string report;
  int runs = 5;
  int warmup = 1;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.sizes.empty()) throw ConfigError("--sizes needs at least one edit size");
  const SessionFile s = load_session(a.session);
  const UNet net(s.config);
  SweepOptions opts;
  opts.sizes = a.sizes;
  opts.timed_runs = a.runs;
  opts.warmup_runs = a.warmup;
  opts.cache.hot_budget_bytes = s.hot_budget_bytes;
  opts.cache.prefetch_horizon = s.prefetch_horizon;
  CacheOptions base_opts;
  auto base = base_store(net, s, base_opts);
  const BenchReport report = run_sweep(net, s.session, *base, opts);

  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  std::ofstream csv(out, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + out.string() + " for writing");
  write_csv(csv, report);
  if (!a.report.empty()) write_json(a.report, report.to_json());
  write_csv(std::cout, report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental sparse editing on a toy latent U-Net"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Dense generation; writes latent, cache and manifest");
  generate->add_option("--config", gen.config, "Config JSON")->required();
  generate->add_option("--prompt", gen.prompt, "Prompt token ids")->required()->delimiter(',');
  generate->add_option("--out", gen.out, "Output directory")->required();

  EditArgs ed;
  auto* edit_cmd = app.add_subcommand("edit", "Edit a previous generation for a new prompt");
  edit_cmd->add_option("--session", ed.session, "Session JSON")->required();
  edit_cmd->add_option("--out", ed.out, "Output directory")->required();
  edit_cmd->add_option("--user-mask", ed.user_mask, "Mask (.pgm or .ft4) replacing detection");
  auto* budget = edit_cmd->add_option("--hot-budget", ed.hot_budget, "Hot-tier budget in bytes");
  edit_cmd->add_flag("--no-sparse", ed.no_sparse, "Dense regeneration baseline");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Edit-size sweep with square user masks");
  sweep->add_option("--session", sw.session, "Session JSON")->required();
  sweep->add_option("--sizes", sw.sizes, "Mask sparsities in (0, 1]")->delimiter(',');
  sweep->add_option("--out", sw.out, "CSV output path")->required();
  sweep->add_option("--report", sw.report, "Optional BenchReport JSON path");
  sweep->add_option("--runs", sw.runs, "Timed runs per measurement")->check(CLI::PositiveNumber);
  sweep->add_option("--warmup", sw.warmup, "Warmup runs per measurement")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*edit_cmd) {
      ed.hot_budget_set = budget->count() > 0;
      return cmd_edit(ed);
    }
    if (*sweep) return cmd_sweep(sw);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

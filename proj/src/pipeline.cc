// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/pipeline.h"

#include <algorithm>

#include "sparsedit/errors.h"

namespace sparsedit {

namespace {

// mask ? a : b, per pixel, across all channels.
Tensor4 blend(const BinaryMask& mask, const Tensor4& a, const Tensor4& b) {
  Tensor4 out = b;
  for (int64_t c = 0; c < out.c(); ++c) {
    float* dst = out.plane(0, c);
    const float* src = a.plane(0, c);
    for (int64_t i = 0; i < mask.pixels(); ++i) {
      if (mask.get_flat(i)) dst[i] = src[i];
    }
  }
  return out;
}

}  // namespace

Tensor4 generate_dense(const UNet& net, const PromptTokens& prompt, CacheStore* store) {
  const Matrix text = net.embed(prompt);
  const int steps = net.config().steps;
  Tensor4 latent = net.initial_latent();
  for (int t = 1; t <= steps; ++t) {
    ForwardContext ctx;
    ctx.mode = ForwardMode::kDense;
    ctx.step = t;
    ctx.record = store;
    latent = apply_step(latent, net.forward(latent, text, ctx), steps);
    if (store != nullptr) store->put(step_latent_key(t), latent);
  }
  return latent;
}

void EditSession::validate(const UNetConfig& config) const {
  if (old_prompt.ids.empty() || new_prompt.ids.empty()) {
    throw ConfigError("old and new prompts must both have tokens");
  }
  if (user_mask) {
    if (user_mask->h() != config.latent_h || user_mask->w() != config.latent_w) {
      throw ConfigError("user mask is " + std::to_string(user_mask->h()) + "x" +
                        std::to_string(user_mask->w()) + ", latent is " +
                        std::to_string(config.latent_h) + "x" + std::to_string(config.latent_w));
    }
    return;
  }
  if (t1 < 1 || t1 > t2 || t2 > std::min(config.steps, kMaxDiffWindowStep)) {
    throw ConfigError("diff window needs 1 <= t1 <= t2 <= min(T, " +
                      std::to_string(kMaxDiffWindowStep) + "), got t1=" + std::to_string(t1) +
                      " t2=" + std::to_string(t2));
  }
  if (dilation_radius < 0) throw ConfigError("dilation radius must be >= 0");
}

std::vector<Tensor4> run_controlled_steps(const UNet& net, const EditSession& session,
                                          CacheStore& store, int last_step) {
  const Matrix text = net.embed(session.new_prompt);
  const SharedTokenMap shared = align_tokens(session.old_prompt, session.new_prompt);
  const int steps = net.config().steps;
  std::vector<Tensor4> latents;
  Tensor4 latent = net.initial_latent();
  for (int t = 1; t <= last_step; ++t) {
    store.set_current_step(t);
    store.prefetch(t + 1);
    ForwardContext ctx;
    ctx.mode = ForwardMode::kControlled;
    ctx.step = t;
    ctx.cache = &store;
    ctx.shared = &shared;
    latent = apply_step(latent, net.forward(latent, text, ctx), steps);
    latents.push_back(latent);
  }
  return latents;
}

MaskDetection detect_mask_from_latents(std::span<const Tensor4> cached,
                                       std::span<const Tensor4> fresh, int t1, int t2,
                                       int dilation_radius) {
  MaskDetection out;
  out.otsu = otsu_threshold(accumulate_diff(cached, fresh, t1, t2));
  out.status = out.otsu.status;
  out.mask = out.status == MaskStatus::kEdit ? dilate(out.otsu.mask, dilation_radius)
                                             : out.otsu.mask;
  return out;
}

EditResult edit(const UNet& net, const EditSession& session, CacheStore& store) {
  const UNetConfig& cfg = net.config();
  session.validate(cfg);
  const int steps = cfg.steps;
  const Tensor4 cached_final = store.get(step_latent_key(steps));

  EditResult result;
  auto finish_unchanged = [&] {
    result.latent = cached_final;
    result.status = MaskStatus::kNoEdit;
    result.cached_bytes_before = result.cached_bytes_after = store.stats().total_bytes;
    result.stats = store.stats();
    return result;
  };

  // Phase 1: find the region to recompute.
  int first_sparse_step = 1;
  Tensor4 latent;
  if (session.user_mask) {
    result.user_mask = true;
    result.mask = *session.user_mask;
    if (result.mask.is_empty()) return finish_unchanged();
    result.status = MaskStatus::kEdit;
    latent = net.initial_latent();
  } else {
    const std::vector<Tensor4> fresh = run_controlled_steps(net, session, store, session.t2);
    std::vector<Tensor4> cached;
    cached.reserve(fresh.size());
    for (int t = 1; t <= session.t2; ++t) cached.push_back(store.get(step_latent_key(t)));
    MaskDetection det = detect_mask_from_latents(cached, fresh, session.t1, session.t2,
                                                 session.dilation_radius);
    result.otsu_epsilon = det.otsu.epsilon;
    if (det.status == MaskStatus::kNoEdit) return finish_unchanged();
    result.status = MaskStatus::kEdit;
    result.mask = std::move(det.mask);
    first_sparse_step = session.t2 + 1;
    latent = blend(result.mask, fresh.back(), cached.back());
  }

  // Plans and completeness check, before any sparse work.
  const MaskPyramid pyramid = build_pyramid(result.mask, cfg.levels());
  result.plans.resize(pyramid.size());
  for (int l = 0; l < cfg.levels(); ++l) {
    const BinaryMask& m = pyramid.at(static_cast<size_t>(l));
    if (net.level_gated(l) && !m.is_full()) result.plans[static_cast<size_t>(l)] = apsc_select(m, 3, 3);
  }
  for (int t = first_sparse_step; t <= steps; ++t) {
    const CacheKey latent_key = step_latent_key(t);
    if (!store.contains(latent_key)) throw CacheMiss("incomplete cache: missing " + latent_key.to_string());
    for (const CacheKey& key : net.sparse_requirements(t, pyramid)) {
      if (!store.contains(key)) throw CacheMiss("incomplete cache: missing " + key.to_string());
    }
  }

  result.cached_bytes_before = store.stats().total_bytes;
  store.compact(result.mask);
  result.cached_bytes_after = store.stats().total_bytes;

  // Phase 2: sparse steps.
  const Matrix text = net.embed(session.new_prompt);
  const int horizon = std::max(store.options().prefetch_horizon, 0);
  store.set_current_step(first_sparse_step);
  store.prefetch(first_sparse_step);
  for (int t = first_sparse_step; t <= steps; ++t) {
    store.set_current_step(t);
    for (int h = 1; h <= horizon && t + h <= steps; ++h) store.prefetch(t + h);
    ForwardContext ctx;
    ctx.mode = ForwardMode::kSparse;
    ctx.step = t;
    ctx.cache = &store;
    ctx.masks = &pyramid;
    ctx.plans = &result.plans;
    ctx.macs = &result.macs;
    const Tensor4 stepped = apply_step(latent, net.forward(latent, text, ctx), steps);
    latent = blend(result.mask, stepped, store.get(step_latent_key(t)));
  }
  store.drain();
  result.latent = std::move(latent);
  result.stats = store.stats();
  return result;
}

}  // namespace sparsedit

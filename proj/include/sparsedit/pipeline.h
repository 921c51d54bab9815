// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Dense generation, difference-mask detection and incremental editing.
//
// generate_dense() fills a CacheStore with everything a later edit needs.
// edit() then runs in two phases: the first t2 steps with the new prompt under
// cross-attention control (dense cost) to find the changed region, and the
// remaining steps sparsely, reusing cached activations outside that region.

#ifndef SPARSEDIT_PIPELINE_H_
#define SPARSEDIT_PIPELINE_H_

#include <optional>
#include <span>
#include <vector>

#include "sparsedit/cache_store.h"
#include "sparsedit/macs.h"
#include "sparsedit/mask.h"
#include "sparsedit/sparse.h"
#include "sparsedit/unet.h"

namespace sparsedit {

// Key of the latent after `step` (1-based) in a generation's cache.
inline CacheKey step_latent_key(int step) {
  return CacheKey{step, 0, CacheRole::kStepLatent};
}

// Runs all config().steps steps. With a store, every layer output, norm
// statistic pair, cross-attention map and step latent is recorded into it.
Tensor4 generate_dense(const UNet& net, const PromptTokens& prompt, CacheStore* store);

struct EditSession {
  PromptTokens old_prompt;
  PromptTokens new_prompt;
  int t1 = kDefaultDiffWindowStart;
  int t2 = kDefaultDiffWindowEnd;
  // Replaces detection verbatim when set.
  std::optional<BinaryMask> user_mask;
  int dilation_radius = 1;

  // Throws ConfigError.
  void validate(const UNetConfig& config) const;
};

// Latents Y_1..Y_last of the new prompt under cross-attention control
// against the cached maps of the old generation.
std::vector<Tensor4> run_controlled_steps(const UNet& net, const EditSession& session,
                                          CacheStore& store, int last_step);

struct MaskDetection {
  MaskStatus status = MaskStatus::kNoEdit;
  BinaryMask mask;  // dilated; empty on kNoEdit
  OtsuResult otsu;
};

// dilate(otsu(accumulate_diff(X, Y, t1, t2))) with step-1-indexed lists.
MaskDetection detect_mask_from_latents(std::span<const Tensor4> cached,
                                       std::span<const Tensor4> fresh, int t1, int t2,
                                       int dilation_radius);

struct EditResult {
  Tensor4 latent;
  MaskStatus status = MaskStatus::kNoEdit;
  BinaryMask mask;
  bool user_mask = false;
  float otsu_epsilon = 1.0f;
  // Sparse phase only; empty when nothing was recomputed.
  MacsReport macs;
  std::vector<GatherPlan> plans;  // one per level; empty plans on ungated levels
  uint64_t cached_bytes_before = 0;
  uint64_t cached_bytes_after = 0;  // after compaction
  CacheStats stats;
};

// The store must hold a complete dense generation of session.old_prompt
// with the same config. It is compacted in place.
EditResult edit(const UNet& net, const EditSession& session, CacheStore& store);

}  // namespace sparsedit

#endif  // SPARSEDIT_PIPELINE_H_

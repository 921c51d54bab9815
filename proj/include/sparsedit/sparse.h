// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Mask-restricted execution of convolution, group normalization and
// attention. Every op starts from the layer's cached output from the previous
// generation and overwrites only mask-active pixels, so anything outside the
// mask is bit-identical to the cache.

#ifndef SPARSEDIT_SPARSE_H_
#define SPARSEDIT_SPARSE_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsedit/kernels.h"
#include "sparsedit/mask.h"
#include "sparsedit/tensor.h"

namespace sparsedit {

inline constexpr std::array<int64_t, 5> kApscBlockSizes = {2, 4, 8, 16, 32};

struct TileOrigin {
  int64_t y = 0;
  int64_t x = 0;
  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

// Block-size choice for tiled sparse convolution. A block of
// (block_h, block_w) input pixels yields a (tile_h, tile_w) output tile;
// tiles sit on a regular grid anchored at (0, 0).
struct GatherPlan {
  int64_t block_h = 0;
  int64_t block_w = 0;
  int64_t tile_h = 0;
  int64_t tile_w = 0;
  int64_t kernel_h = 0;
  int64_t kernel_w = 0;
  int64_t plane_h = 0;
  int64_t plane_w = 0;
  std::vector<TileOrigin> origins;
  int64_t cost = 0;  // tile_h * tile_w * origins.size()

  int64_t tile_area() const { return tile_h * tile_w; }
  int64_t computed_pixels() const { return tile_area() * static_cast<int64_t>(origins.size()); }
  std::string to_string() const;
};

// Tile grid cost f = tile area * (tiles touching an active pixel).
// Candidates smaller than the kernel are skipped; throws ConfigError if none
// remain. Ties go to the smaller block (area, then height).
GatherPlan apsc_select(const BinaryMask& mask, int64_t kernel_h, int64_t kernel_w,
                       std::span<const int64_t> candidates = kApscBlockSizes);

// Stacked input blocks (n * origins, c, block_h, block_w), sample-major. The
// block for origin o covers output tile o plus the kernel halo; reads outside
// the plane are zero, as in same-padding.
Tensor4 gather(const Tensor4& input, const GatherPlan& plan);

struct SparseLayerContext {
  int64_t step = 0;
  int64_t layer_id = 0;
  std::optional<Tensor4> cached_output;
  std::vector<float> cached_mean;  // (n * groups)
  std::vector<float> cached_var;
  size_t mask_level = 0;
  bool resolution_gate = true;

  std::string describe() const;
};

// Sparse execution is allowed only on layers whose area is at least
// `gate_fraction` of the latent area.
bool passes_resolution_gate(int64_t layer_h, int64_t layer_w, int64_t latent_h,
                            int64_t latent_w, double gate_fraction);

Tensor4 sparse_conv(const Tensor4& input, const ConvWeights& weights, const GatherPlan& plan,
                    const SparseLayerContext& ctx, const BinaryMask& mask);

// MACs sparse_conv spends: every pixel of every gathered tile.
int64_t sparse_conv_macs(const GatherPlan& plan, const ConvWeights& weights, int64_t samples = 1);

// Normalizes mask-active pixels with the cached per-group statistics.
Tensor4 approx_group_norm(const Tensor4& input, const SparseLayerContext& ctx,
                          std::span<const float> gamma, std::span<const float> beta, float eps,
                          const BinaryMask& mask);

// Self-attention among the gathered active tokens only.
Tensor4 sparse_self_attention(const Tensor4& input, const SparseLayerContext& ctx,
                              const BinaryMask& mask, const AttentionProjections& proj);

// Cross-attention of active image tokens against every text token.
Tensor4 sparse_cross_attention(const Tensor4& input, const Matrix& wq, const Matrix& text_keys,
                               const Matrix& text_values, const SparseLayerContext& ctx,
                               const BinaryMask& mask);

}  // namespace sparsedit

#endif  // SPARSEDIT_SPARSE_H_

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// A small deterministic U-Net denoiser with seeded random weights. Each level
// runs conv -> group norm -> (+ time embedding, SiLU) -> self-attention ->
// cross-attention, with residual adds around both attentions; levels are
// joined by 2x average pooling on the way down and nearest upsampling plus a
// skip concatenation on the way up.

#ifndef SPARSEDIT_UNET_H_
#define SPARSEDIT_UNET_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sparsedit/cache_store.h"
#include "sparsedit/kernels.h"
#include "sparsedit/macs.h"
#include "sparsedit/mask.h"
#include "sparsedit/sparse.h"
#include "sparsedit/tensor.h"

namespace sparsedit {

struct UNetConfig {
  int64_t latent_h = 64;
  int64_t latent_w = 64;
  int64_t latent_channels = 4;
  std::vector<int64_t> channels = {16, 32, 64};
  int64_t groups = 4;
  int64_t text_dim = 16;
  int steps = 20;
  double gate_fraction = 0.25;
  uint64_t seed = 42;
  float norm_eps = 1e-5f;

  int levels() const { return static_cast<int>(channels.size()); }
  // Throws ConfigError.
  void validate() const;
};

struct PromptTokens {
  std::vector<int64_t> ids;
};

// Token pairs (old index, new index) left unchanged by the edit: a longest
// common subsequence of the two id lists, strictly increasing in both.
struct SharedTokenMap {
  std::vector<std::pair<int64_t, int64_t>> pairs;

  // True when every old and every new token is paired.
  bool is_identity(size_t old_count, size_t new_count) const {
    return pairs.size() == old_count && pairs.size() == new_count;
  }
};

SharedTokenMap align_tokens(const PromptTokens& old_prompt, const PromptTokens& new_prompt);

enum class LayerKind { kConv, kGroupNorm, kSelfAttention, kCrossAttention };
const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  int64_t id = 0;
  LayerKind kind = LayerKind::kConv;
  int level = 0;  // resolution level, 0 = latent
  int64_t c_in = 0;
  int64_t c_out = 0;
  std::string name;
};

enum class ForwardMode { kDense, kControlled, kSparse };

// Everything a forward pass reads or writes besides the latent itself.
struct ForwardContext {
  ForwardMode mode = ForwardMode::kDense;
  int step = 1;
  // Dense and controlled modes: activations are put here when set.
  CacheStore* record = nullptr;
  // Controlled mode: cached cross-attention maps. Sparse mode: cached layer
  // outputs and normalization statistics.
  CacheStore* cache = nullptr;
  // Controlled mode.
  const SharedTokenMap* shared = nullptr;
  // Sparse mode: mask per resolution level and one plan per gated level.
  const MaskPyramid* masks = nullptr;
  const std::vector<GatherPlan>* plans = nullptr;
  // Optional MAC accounting.
  MacsReport* macs = nullptr;
};

class UNet {
 public:
  explicit UNet(UNetConfig config);

  const UNetConfig& config() const { return config_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  // Seeded starting latent (1, latent_channels, latent_h, latent_w).
  Tensor4 initial_latent() const;
  // Deterministic (tokens x text_dim) embedding table lookup.
  Matrix embed(const PromptTokens& prompt) const;

  // Spatial size of a resolution level and whether it runs sparsely.
  std::pair<int64_t, int64_t> level_size(int level) const;
  bool level_gated(int level) const;

  // The network output (the latent delta) for one step.
  Tensor4 forward(const Tensor4& latent, const Matrix& text, ForwardContext& ctx) const;

  // Layer ids whose cached activations sparse mode reads at each step.
  std::vector<CacheKey> sparse_requirements(int step, const MaskPyramid& masks) const;

 private:
  struct LayerWeights {
    ConvWeights conv;
    std::vector<float> gamma;
    std::vector<float> beta;
    AttentionProjections self_proj;
    Matrix cross_wq;
    Matrix cross_wk;
    Matrix cross_wv;
  };

  struct Block {
    int64_t conv = 0;
    int64_t norm = 0;
    int64_t self_attn = 0;
    int64_t cross_attn = 0;
  };

  void build();
  int64_t add_layer(LayerKind kind, int level, int64_t c_in, int64_t c_out, std::string name);
  Tensor4 run_block(const Block& block, const Tensor4& x, const Matrix& text,
                    ForwardContext& ctx) const;
  Tensor4 run_conv(int64_t id, const Tensor4& x, ForwardContext& ctx) const;
  Tensor4 run_norm(int64_t id, const Tensor4& x, ForwardContext& ctx) const;
  Tensor4 run_self_attention(int64_t id, const Tensor4& x, ForwardContext& ctx) const;
  Tensor4 run_cross_attention(int64_t id, const Tensor4& x, const Matrix& text,
                              ForwardContext& ctx) const;
  // True when this layer takes the sparse path under `ctx`.
  bool sparse_layer(const LayerSpec& spec, const ForwardContext& ctx) const;
  const BinaryMask& layer_mask(const LayerSpec& spec, const ForwardContext& ctx) const;
  SparseLayerContext sparse_context(const LayerSpec& spec, const ForwardContext& ctx,
                                    bool with_stats) const;
  void add_time_embedding(Tensor4& x, int step) const;

  UNetConfig config_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerWeights> weights_;
  int64_t conv_in_ = 0;
  int64_t conv_out_ = 0;
  std::vector<Block> down_;
  std::vector<Block> up_;  // up_[l] is the decoder block at level l (l < levels - 1)
};

// latent - delta / steps, the deterministic update shared by every path.
Tensor4 apply_step(const Tensor4& latent, const Tensor4& delta, int steps);

}  // namespace sparsedit

#endif  // SPARSEDIT_UNET_H_

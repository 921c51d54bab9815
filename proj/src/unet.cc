// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/unet.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "sparsedit/errors.h"

namespace sparsedit {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent deterministic streams derived from the config seed.
constexpr uint64_t kWeightStream = 0x5745494748545331ULL;
constexpr uint64_t kNoiseStream = 0x4E4F495345303031ULL;
constexpr uint64_t kTokenStream = 0x544F4B454E303031ULL;

void fill_uniform(std::span<float> out, std::mt19937_64& rng, float bound) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : out) v = dist(rng);
}

Matrix random_matrix(int64_t rows, int64_t cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  fill_uniform(m.data, rng, 1.0f / std::sqrt(static_cast<float>(rows)));
  return m;
}

void add_inplace(Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("residual add shape mismatch " + a.shape().to_string() + " vs " +
                            b.shape().to_string());
  }
  auto dst = a.data();
  auto src = b.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor4 stats_tensor(const std::vector<float>& stats, int64_t n) {
  return Tensor4(Shape{n, static_cast<int64_t>(stats.size()) / n, 1, 1}, stats);
}

Matrix matrix_from_tensor(const Tensor4& t) {
  Matrix m(t.h(), t.w());
  std::copy(t.data().begin(), t.data().end(), m.data.begin());
  return m;
}

Tensor4 tensor_from_matrix(const Matrix& m) {
  return Tensor4(Shape{1, 1, m.rows, m.cols}, m.data);
}

}  // namespace

void UNetConfig::validate() const {
  const bool allowed_latent = [&] {
    for (int64_t s : {32, 64, 96, 128}) {
      if (latent_h == s) {
        for (int64_t t : {32, 64, 96, 128}) {
          if (latent_w == t) return true;
        }
      }
    }
    return false;
  }();
  if (!allowed_latent) {
    throw ConfigError("latent size must be one of 32/64/96/128 per side, got " +
                      std::to_string(latent_h) + "x" + std::to_string(latent_w));
  }
  if (channels.empty()) throw ConfigError("channels must list at least one level");
  if (groups <= 0) throw ConfigError("groups must be positive");
  for (int64_t c : channels) {
    if (c <= 0 || c % groups != 0) {
      throw ConfigError("channel count " + std::to_string(c) + " is not divisible by " +
                        std::to_string(groups) + " groups");
    }
  }
  const int64_t factor = int64_t{1} << (levels() - 1);
  if (latent_h % factor != 0 || latent_w % factor != 0) {
    throw ConfigError("latent size is not divisible by 2^(levels - 1) = " + std::to_string(factor));
  }
  if (latent_channels <= 0) throw ConfigError("latent_channels must be positive");
  if (text_dim <= 0) throw ConfigError("text_dim must be positive");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(gate_fraction > 0.0 && gate_fraction <= 1.0)) {
    throw ConfigError("gate_fraction must be in (0, 1]");
  }
  if (!(norm_eps > 0.0f)) throw ConfigError("norm_eps must be positive");
}

SharedTokenMap align_tokens(const PromptTokens& old_prompt, const PromptTokens& new_prompt) {
  const auto& a = old_prompt.ids;
  const auto& b = new_prompt.ids;
  const size_t n = a.size();
  const size_t m = b.size();
  // lcs[i][j]: LCS length of a[i..] and b[j..].
  std::vector<std::vector<int32_t>> lcs(n + 1, std::vector<int32_t>(m + 1, 0));
  for (size_t i = n; i-- > 0;) {
    for (size_t j = m; j-- > 0;) {
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  SharedTokenMap map;
  size_t i = 0;
  size_t j = 0;
  while (i < n && j < m) {
    if (a[i] == b[j]) {
      map.pairs.emplace_back(static_cast<int64_t>(i), static_cast<int64_t>(j));
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }
  return map;
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kGroupNorm: return "group_norm";
    case LayerKind::kSelfAttention: return "self_attention";
    case LayerKind::kCrossAttention: return "cross_attention";
  }
  return "unknown";
}

UNet::UNet(UNetConfig config) : config_(std::move(config)) {
  config_.validate();
  build();
}

int64_t UNet::add_layer(LayerKind kind, int level, int64_t c_in, int64_t c_out,
                        std::string name) {
  const auto id = static_cast<int64_t>(layers_.size());
  layers_.push_back(LayerSpec{id, kind, level, c_in, c_out, std::move(name)});
  return id;
}

void UNet::build() {
  const int levels = config_.levels();
  const auto& ch = config_.channels;

  auto block = [&](int level, int64_t c_in, const std::string& prefix) {
    const int64_t c = ch[static_cast<size_t>(level)];
    Block b;
    b.conv = add_layer(LayerKind::kConv, level, c_in, c, prefix + ".conv");
    b.norm = add_layer(LayerKind::kGroupNorm, level, c, c, prefix + ".norm");
    b.self_attn = add_layer(LayerKind::kSelfAttention, level, c, c, prefix + ".self_attn");
    b.cross_attn = add_layer(LayerKind::kCrossAttention, level, c, c, prefix + ".cross_attn");
    return b;
  };

  conv_in_ = add_layer(LayerKind::kConv, 0, config_.latent_channels, ch[0], "conv_in");
  int64_t prev = ch[0];
  for (int l = 0; l < levels; ++l) {
    down_.push_back(block(l, prev, "down" + std::to_string(l)));
    prev = ch[static_cast<size_t>(l)];
  }
  up_.resize(static_cast<size_t>(std::max(levels - 1, 0)));
  for (int l = levels - 2; l >= 0; --l) {
    up_[static_cast<size_t>(l)] =
        block(l, ch[static_cast<size_t>(l) + 1] + ch[static_cast<size_t>(l)], "up" + std::to_string(l));
  }
  conv_out_ = add_layer(LayerKind::kConv, 0, ch[0], config_.latent_channels, "conv_out");

  std::mt19937_64 rng(splitmix64(config_.seed ^ kWeightStream));
  weights_.resize(layers_.size());
  for (const LayerSpec& spec : layers_) {
    LayerWeights& w = weights_[static_cast<size_t>(spec.id)];
    switch (spec.kind) {
      case LayerKind::kConv: {
        w.conv.weight = Tensor4(spec.c_out, spec.c_in, 3, 3);
        w.conv.bias.resize(static_cast<size_t>(spec.c_out));
        w.conv.padding = 1;
        fill_uniform(w.conv.weight.data(), rng, 1.0f / std::sqrt(static_cast<float>(spec.c_in * 9)));
        fill_uniform(w.conv.bias, rng, 0.1f);
        break;
      }
      case LayerKind::kGroupNorm: {
        w.gamma.resize(static_cast<size_t>(spec.c_out));
        w.beta.resize(static_cast<size_t>(spec.c_out));
        std::uniform_real_distribution<float> g(0.8f, 1.2f);
        for (float& v : w.gamma) v = g(rng);
        fill_uniform(w.beta, rng, 0.1f);
        break;
      }
      case LayerKind::kSelfAttention:
        w.self_proj.wq = random_matrix(spec.c_in, spec.c_out, rng);
        w.self_proj.wk = random_matrix(spec.c_in, spec.c_out, rng);
        w.self_proj.wv = random_matrix(spec.c_in, spec.c_out, rng);
        break;
      case LayerKind::kCrossAttention:
        w.cross_wq = random_matrix(spec.c_in, spec.c_out, rng);
        w.cross_wk = random_matrix(config_.text_dim, spec.c_out, rng);
        w.cross_wv = random_matrix(config_.text_dim, spec.c_out, rng);
        break;
    }
  }
}

Tensor4 UNet::initial_latent() const {
  std::mt19937_64 rng(splitmix64(config_.seed ^ kNoiseStream));
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor4 t(1, config_.latent_channels, config_.latent_h, config_.latent_w);
  for (float& v : t.storage()) v = dist(rng);
  return t;
}

Matrix UNet::embed(const PromptTokens& prompt) const {
  if (prompt.ids.empty()) throw ConfigError("prompt must contain at least one token");
  Matrix m(static_cast<int64_t>(prompt.ids.size()), config_.text_dim);
  for (size_t i = 0; i < prompt.ids.size(); ++i) {
    std::mt19937_64 rng(
        splitmix64(splitmix64(config_.seed ^ kTokenStream) ^ static_cast<uint64_t>(prompt.ids[i])));
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    float* row = m.row(static_cast<int64_t>(i));
    for (int64_t d = 0; d < config_.text_dim; ++d) row[d] = dist(rng);
  }
  return m;
}

std::pair<int64_t, int64_t> UNet::level_size(int level) const {
  return {config_.latent_h >> level, config_.latent_w >> level};
}

bool UNet::level_gated(int level) const {
  const auto [h, w] = level_size(level);
  return passes_resolution_gate(h, w, config_.latent_h, config_.latent_w, config_.gate_fraction);
}

const BinaryMask& UNet::layer_mask(const LayerSpec& spec, const ForwardContext& ctx) const {
  return ctx.masks->at(static_cast<size_t>(spec.level));
}

bool UNet::sparse_layer(const LayerSpec& spec, const ForwardContext& ctx) const {
  if (ctx.mode != ForwardMode::kSparse || !level_gated(spec.level)) return false;
  // A fully covered level gains nothing from the sparse path and, for group
  // norm, would replace exact statistics with cached ones.
  return !layer_mask(spec, ctx).is_full();
}

SparseLayerContext UNet::sparse_context(const LayerSpec& spec, const ForwardContext& ctx,
                                        bool with_stats) const {
  SparseLayerContext s;
  s.step = ctx.step;
  s.layer_id = spec.id;
  s.mask_level = static_cast<size_t>(spec.level);
  s.resolution_gate = level_gated(spec.level);
  s.cached_output = ctx.cache->get(CacheKey{ctx.step, spec.id, CacheRole::kLayerOutput});
  if (with_stats) {
    s.cached_mean = ctx.cache->get(CacheKey{ctx.step, spec.id, CacheRole::kNormMean}).storage();
    s.cached_var = ctx.cache->get(CacheKey{ctx.step, spec.id, CacheRole::kNormVar}).storage();
  }
  return s;
}

std::vector<CacheKey> UNet::sparse_requirements(int step, const MaskPyramid& masks) const {
  std::vector<CacheKey> keys;
  for (const LayerSpec& spec : layers_) {
    if (!level_gated(spec.level) || masks.at(static_cast<size_t>(spec.level)).is_full()) continue;
    keys.push_back(CacheKey{step, spec.id, CacheRole::kLayerOutput});
    if (spec.kind == LayerKind::kGroupNorm) {
      keys.push_back(CacheKey{step, spec.id, CacheRole::kNormMean});
      keys.push_back(CacheKey{step, spec.id, CacheRole::kNormVar});
    }
  }
  return keys;
}

Tensor4 UNet::run_conv(int64_t id, const Tensor4& x, ForwardContext& ctx) const {
  const LayerSpec& spec = layers_[static_cast<size_t>(id)];
  const ConvWeights& w = weights_[static_cast<size_t>(id)].conv;
  const int64_t dense_macs = macs_conv(x.shape(), w, x.n() * x.h() * x.w());
  int64_t spent = dense_macs;
  Tensor4 out;
  if (sparse_layer(spec, ctx)) {
    const GatherPlan& plan = ctx.plans->at(static_cast<size_t>(spec.level));
    out = sparse_conv(x, w, plan, sparse_context(spec, ctx, false), layer_mask(spec, ctx));
    spent = sparse_conv_macs(plan, w, x.n());
  } else {
    out = conv2d(x, w);
  }
  if (ctx.macs != nullptr) ctx.macs->add(id, "conv", level_gated(spec.level), dense_macs, spent);
  if (ctx.record != nullptr) ctx.record->put(CacheKey{ctx.step, id, CacheRole::kLayerOutput}, out);
  return out;
}

Tensor4 UNet::run_norm(int64_t id, const Tensor4& x, ForwardContext& ctx) const {
  const LayerSpec& spec = layers_[static_cast<size_t>(id)];
  const LayerWeights& w = weights_[static_cast<size_t>(id)];
  if (sparse_layer(spec, ctx)) {
    return approx_group_norm(x, sparse_context(spec, ctx, true), w.gamma, w.beta,
                             config_.norm_eps, layer_mask(spec, ctx));
  }
  GroupNormResult r = group_norm(x, config_.groups, w.gamma, w.beta, config_.norm_eps);
  if (ctx.record != nullptr) {
    ctx.record->put(CacheKey{ctx.step, id, CacheRole::kLayerOutput}, r.output);
    ctx.record->put(CacheKey{ctx.step, id, CacheRole::kNormMean}, stats_tensor(r.mean, x.n()));
    ctx.record->put(CacheKey{ctx.step, id, CacheRole::kNormVar}, stats_tensor(r.var, x.n()));
  }
  return std::move(r.output);
}

Tensor4 UNet::run_self_attention(int64_t id, const Tensor4& x, ForwardContext& ctx) const {
  const LayerSpec& spec = layers_[static_cast<size_t>(id)];
  const AttentionProjections& proj = weights_[static_cast<size_t>(id)].self_proj;
  const int64_t tokens = x.h() * x.w();
  auto cost = [&](int64_t t) {
    return x.n() * (3 * macs_projection(t, spec.c_in, spec.c_out) +
                    macs_attention(t, t, spec.c_out));
  };
  const int64_t dense_macs = cost(tokens);
  int64_t spent = dense_macs;
  Tensor4 out;
  if (sparse_layer(spec, ctx)) {
    const BinaryMask& mask = layer_mask(spec, ctx);
    out = sparse_self_attention(x, sparse_context(spec, ctx, false), mask, proj);
    spent = cost(mask.active_count());
  } else {
    out = self_attention_layer(x, proj);
  }
  if (ctx.macs != nullptr) {
    ctx.macs->add(id, "self_attention", level_gated(spec.level), dense_macs, spent);
  }
  if (ctx.record != nullptr) ctx.record->put(CacheKey{ctx.step, id, CacheRole::kLayerOutput}, out);
  return out;
}

Tensor4 UNet::run_cross_attention(int64_t id, const Tensor4& x, const Matrix& text,
                                  ForwardContext& ctx) const {
  const LayerSpec& spec = layers_[static_cast<size_t>(id)];
  const LayerWeights& w = weights_[static_cast<size_t>(id)];
  const Matrix keys = matmul(text, w.cross_wk);
  const Matrix values = matmul(text, w.cross_wv);
  const int64_t tokens = x.h() * x.w();
  auto cost = [&](int64_t t) {
    return x.n() * (macs_projection(t, spec.c_in, spec.c_out) +
                    macs_attention(t, text.rows, spec.c_out)) +
           2 * macs_projection(text.rows, config_.text_dim, spec.c_out);
  };
  const int64_t dense_macs = cost(tokens);
  int64_t spent = dense_macs;
  Tensor4 out;
  Matrix probs;

  if (sparse_layer(spec, ctx)) {
    const BinaryMask& mask = layer_mask(spec, ctx);
    out = sparse_cross_attention(x, w.cross_wq, keys, values, sparse_context(spec, ctx, false),
                                 mask);
    spent = cost(mask.active_count());
  } else if (ctx.mode == ForwardMode::kControlled) {
    if (ctx.shared == nullptr || ctx.cache == nullptr) {
      throw ContractViolation("controlled mode needs a token map and a cache");
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(w.cross_wq.cols));
    probs = attention_probs(matmul(to_tokens(x, 0), w.cross_wq), keys, scale);
    const Matrix cached =
        matrix_from_tensor(ctx.cache->get(CacheKey{ctx.step, id, CacheRole::kCrossAttnMap}));
    if (cached.rows != probs.rows) {
      throw ContractViolation("cached cross-attention map has " + std::to_string(cached.rows) +
                              " rows, expected " + std::to_string(probs.rows));
    }
    for (const auto& [old_idx, new_idx] : ctx.shared->pairs) {
      if (old_idx >= cached.cols || new_idx >= probs.cols) {
        throw ContractViolation("shared token pair out of range for layer " + spec.name);
      }
      for (int64_t r = 0; r < probs.rows; ++r) probs.at(r, new_idx) = cached.at(r, old_idx);
    }
    if (!ctx.shared->is_identity(static_cast<size_t>(cached.cols), static_cast<size_t>(probs.cols))) {
      for (int64_t r = 0; r < probs.rows; ++r) {
        float* row = probs.row(r);
        float total = 0.0f;
        for (int64_t j = 0; j < probs.cols; ++j) total += row[j];
        for (int64_t j = 0; j < probs.cols; ++j) row[j] /= total;
      }
    }
    out = Tensor4(x.n(), values.cols, x.h(), x.w());
    from_tokens(apply_probs(probs, values), out, 0);
  } else {
    out = cross_attention_layer(x, w.cross_wq, keys, values, &probs);
  }

  if (ctx.macs != nullptr) {
    ctx.macs->add(id, "cross_attention", level_gated(spec.level), dense_macs, spent);
  }
  if (ctx.record != nullptr) {
    ctx.record->put(CacheKey{ctx.step, id, CacheRole::kLayerOutput}, out);
    ctx.record->put(CacheKey{ctx.step, id, CacheRole::kCrossAttnMap}, tensor_from_matrix(probs));
  }
  return out;
}

void UNet::add_time_embedding(Tensor4& x, int step) const {
  for (int64_t c = 0; c < x.c(); ++c) {
    const float freq = 0.3f + 0.05f * static_cast<float>(c);
    const float emb = 0.1f * std::sin(static_cast<float>(step) * freq + static_cast<float>(c));
    for (int64_t n = 0; n < x.n(); ++n) {
      float* p = x.plane(n, c);
      for (int64_t i = 0; i < x.h() * x.w(); ++i) p[i] = silu(p[i] + emb);
    }
  }
}

Tensor4 UNet::run_block(const Block& block, const Tensor4& x, const Matrix& text,
                        ForwardContext& ctx) const {
  Tensor4 h = run_norm(block.norm, run_conv(block.conv, x, ctx), ctx);
  add_time_embedding(h, ctx.step);
  add_inplace(h, run_self_attention(block.self_attn, h, ctx));
  add_inplace(h, run_cross_attention(block.cross_attn, h, text, ctx));
  return h;
}

Tensor4 UNet::forward(const Tensor4& latent, const Matrix& text, ForwardContext& ctx) const {
  const Shape expect{1, config_.latent_channels, config_.latent_h, config_.latent_w};
  if (latent.shape() != expect) {
    throw ContractViolation("latent " + latent.shape().to_string() + " does not match " +
                            expect.to_string());
  }
  if (text.cols != config_.text_dim) {
    throw ContractViolation("text embedding width " + std::to_string(text.cols) +
                            " != text_dim " + std::to_string(config_.text_dim));
  }
  if (ctx.mode == ForwardMode::kSparse) {
    if (ctx.cache == nullptr || ctx.masks == nullptr || ctx.plans == nullptr ||
        ctx.masks->size() != static_cast<size_t>(config_.levels())) {
      throw ContractViolation("sparse mode needs a cache, a full mask pyramid and plans");
    }
  }

  const int levels = config_.levels();
  Tensor4 h = run_conv(conv_in_, latent, ctx);
  std::vector<Tensor4> skips;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) h = avg_pool2x(h);
    h = run_block(down_[static_cast<size_t>(l)], h, text, ctx);
    if (l < levels - 1) skips.push_back(h);
  }
  for (int l = levels - 2; l >= 0; --l) {
    h = run_block(up_[static_cast<size_t>(l)],
                  concat_channels(upsample2x(h), skips[static_cast<size_t>(l)]), text, ctx);
  }
  return run_conv(conv_out_, h, ctx);
}

Tensor4 apply_step(const Tensor4& latent, const Tensor4& delta, int steps) {
  if (latent.shape() != delta.shape()) {
    throw ContractViolation("step delta " + delta.shape().to_string() + " does not match latent " +
                            latent.shape().to_string());
  }
  Tensor4 out(latent.shape());
  const auto denom = static_cast<float>(steps);
  for (size_t i = 0; i < out.data().size(); ++i) {
    out.data()[i] = latent.data()[i] - delta.data()[i] / denom;
  }
  return out;
}

}  // namespace sparsedit

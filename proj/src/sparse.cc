// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/sparse.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sparsedit/errors.h"

namespace sparsedit {

std::string GatherPlan::to_string() const {
  std::ostringstream os;
  os << "block " << block_h << "x" << block_w << " tile " << tile_h << "x" << tile_w
     << " tiles " << origins.size() << " cost " << cost;
  return os.str();
}

std::string SparseLayerContext::describe() const {
  return "layer " + std::to_string(layer_id) + " at step " + std::to_string(step);
}

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

void check_mask_plane(const BinaryMask& mask, const Tensor4& input, const char* op) {
  if (mask.h() != input.h() || mask.w() != input.w()) {
    throw ContractViolation(std::string(op) + ": mask " + std::to_string(mask.h()) + "x" +
                            std::to_string(mask.w()) + " does not match input " +
                            input.shape().to_string());
  }
}

// Starting point for a sparse op: the cached layer output, or zeros when the
// mask covers everything and no cache exists.
Tensor4 scatter_base(const SparseLayerContext& ctx, const BinaryMask& mask, const Shape& shape,
                     const char* op) {
  if (ctx.cached_output.has_value()) {
    if (ctx.cached_output->shape() != shape) {
      throw ContractViolation(std::string(op) + ": cached output " +
                              ctx.cached_output->shape().to_string() + " does not match " +
                              shape.to_string() + " for " + ctx.describe());
    }
    return *ctx.cached_output;
  }
  if (!mask.is_full()) {
    throw CacheMiss(std::string(op) + ": no cached output for " + ctx.describe());
  }
  return Tensor4(shape);
}

void check_gate(const SparseLayerContext& ctx, const char* op) {
  if (!ctx.resolution_gate) {
    throw ContractViolation(std::string(op) + ": " + ctx.describe() +
                            " is below the resolution gate; run it densely");
  }
}

// Copies one input block (c, block_h, block_w) for the tile at `origin`.
void gather_block(const Tensor4& input, int64_t n, const GatherPlan& plan, TileOrigin origin,
                  float* block) {
  const int64_t pad_y = (plan.kernel_h - 1) / 2;
  const int64_t pad_x = (plan.kernel_w - 1) / 2;
  const int64_t y0 = origin.y - pad_y;
  const int64_t x0 = origin.x - pad_x;
  for (int64_t c = 0; c < input.c(); ++c) {
    const float* src = input.plane(n, c);
    float* dst = block + c * plan.block_h * plan.block_w;
    for (int64_t by = 0; by < plan.block_h; ++by) {
      const int64_t y = y0 + by;
      float* row = dst + by * plan.block_w;
      if (y < 0 || y >= input.h()) {
        std::fill(row, row + plan.block_w, 0.0f);
        continue;
      }
      for (int64_t bx = 0; bx < plan.block_w; ++bx) {
        const int64_t x = x0 + bx;
        row[bx] = (x < 0 || x >= input.w()) ? 0.0f : src[y * input.w() + x];
      }
    }
  }
}

Matrix gather_rows(const Matrix& tokens, std::span<const int64_t> rows) {
  Matrix out(static_cast<int64_t>(rows.size()), tokens.cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy(tokens.row(rows[i]), tokens.row(rows[i]) + tokens.cols,
              out.row(static_cast<int64_t>(i)));
  }
  return out;
}

void scatter_rows(const Matrix& values, std::span<const int64_t> rows, Tensor4& out, int64_t n) {
  for (int64_t c = 0; c < out.c(); ++c) {
    float* dst = out.plane(n, c);
    for (size_t i = 0; i < rows.size(); ++i) {
      dst[rows[i]] = values.at(static_cast<int64_t>(i), c);
    }
  }
}

}  // namespace

GatherPlan apsc_select(const BinaryMask& mask, int64_t kernel_h, int64_t kernel_w,
                       std::span<const int64_t> candidates) {
  const std::vector<int64_t> active = mask.active_indices();
  std::optional<GatherPlan> best;
  std::vector<uint8_t> touched;

  for (int64_t bh : candidates) {
    for (int64_t bw : candidates) {
      if (bh < kernel_h || bw < kernel_w) continue;
      GatherPlan plan;
      plan.block_h = bh;
      plan.block_w = bw;
      plan.tile_h = bh - kernel_h + 1;
      plan.tile_w = bw - kernel_w + 1;
      plan.kernel_h = kernel_h;
      plan.kernel_w = kernel_w;
      plan.plane_h = mask.h();
      plan.plane_w = mask.w();

      const int64_t grid_h = ceil_div(mask.h(), plan.tile_h);
      const int64_t grid_w = ceil_div(mask.w(), plan.tile_w);
      touched.assign(static_cast<size_t>(grid_h * grid_w), 0);
      int64_t tiles = 0;
      for (int64_t idx : active) {
        const int64_t cell = (idx / mask.w()) / plan.tile_h * grid_w + (idx % mask.w()) / plan.tile_w;
        if (!touched[static_cast<size_t>(cell)]) {
          touched[static_cast<size_t>(cell)] = 1;
          ++tiles;
        }
      }
      plan.cost = plan.tile_area() * tiles;

      const bool better =
          !best || plan.cost < best->cost ||
          (plan.cost == best->cost &&
           (bh * bw < best->block_h * best->block_w ||
            (bh * bw == best->block_h * best->block_w && bh < best->block_h)));
      if (!better) continue;

      plan.origins.clear();
      plan.origins.reserve(static_cast<size_t>(tiles));
      for (int64_t gy = 0; gy < grid_h; ++gy) {
        for (int64_t gx = 0; gx < grid_w; ++gx) {
          if (touched[static_cast<size_t>(gy * grid_w + gx)]) {
            plan.origins.push_back({gy * plan.tile_h, gx * plan.tile_w});
          }
        }
      }
      best = std::move(plan);
    }
  }
  if (!best) {
    throw ConfigError("no APSC block size fits a " + std::to_string(kernel_h) + "x" +
                      std::to_string(kernel_w) + " kernel");
  }
  return *std::move(best);
}

Tensor4 gather(const Tensor4& input, const GatherPlan& plan) {
  if (input.h() != plan.plane_h || input.w() != plan.plane_w) {
    throw ContractViolation("gather: plan built for " + std::to_string(plan.plane_h) + "x" +
                            std::to_string(plan.plane_w) + " but input is " +
                            input.shape().to_string());
  }
  const auto blocks = static_cast<int64_t>(plan.origins.size());
  Tensor4 out(input.n() * blocks, input.c(), plan.block_h, plan.block_w);
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t b = 0; b < blocks; ++b) {
      gather_block(input, n, plan, plan.origins[static_cast<size_t>(b)], out.plane(n * blocks + b, 0));
    }
  }
  return out;
}

bool passes_resolution_gate(int64_t layer_h, int64_t layer_w, int64_t latent_h,
                            int64_t latent_w, double gate_fraction) {
  return static_cast<double>(layer_h * layer_w) >=
         gate_fraction * static_cast<double>(latent_h * latent_w);
}

Tensor4 sparse_conv(const Tensor4& input, const ConvWeights& weights, const GatherPlan& plan,
                    const SparseLayerContext& ctx, const BinaryMask& mask) {
  weights.validate();
  if (input.c() != weights.c_in()) {
    throw ContractViolation("sparse_conv input " + input.shape().to_string() +
                            " does not match weights " + weights.weight.shape().to_string());
  }
  check_mask_plane(mask, input, "sparse_conv");
  if (plan.plane_h != input.h() || plan.plane_w != input.w() ||
      plan.kernel_h != weights.kernel_h() || plan.kernel_w != weights.kernel_w()) {
    throw ContractViolation("sparse_conv: plan (" + plan.to_string() +
                            ") was not built for this layer");
  }
  const Shape out_shape{input.n(), weights.c_out(), input.h(), input.w()};
  Tensor4 out = scatter_base(ctx, mask, out_shape, "sparse_conv");

  std::vector<float> block(static_cast<size_t>(input.c() * plan.block_h * plan.block_w));
  std::vector<float> tile(static_cast<size_t>(weights.c_out() * plan.tile_area()));
  for (int64_t n = 0; n < input.n(); ++n) {
    int64_t written = 0;
    for (const TileOrigin& o : plan.origins) {
      gather_block(input, n, plan, o, block.data());
      conv2d_valid(block.data(), input.c(), plan.block_h, plan.block_w, weights, tile.data());
      const int64_t y_end = std::min(o.y + plan.tile_h, input.h());
      const int64_t x_end = std::min(o.x + plan.tile_w, input.w());
      for (int64_t y = o.y; y < y_end; ++y) {
        for (int64_t x = o.x; x < x_end; ++x) {
          if (!mask.get(y, x)) continue;
          ++written;
          const int64_t t = (y - o.y) * plan.tile_w + (x - o.x);
          for (int64_t co = 0; co < weights.c_out(); ++co) {
            out.plane(n, co)[y * input.w() + x] = tile[static_cast<size_t>(co * plan.tile_area() + t)];
          }
        }
      }
    }
    if (written != mask.active_count()) {
      throw ContractViolation("sparse_conv: plan tiles cover " + std::to_string(written) + " of " +
                              std::to_string(mask.active_count()) + " active pixels");
    }
  }
  return out;
}

int64_t sparse_conv_macs(const GatherPlan& plan, const ConvWeights& weights, int64_t samples) {
  return macs_conv(Shape{samples, weights.c_in(), plan.plane_h, plan.plane_w}, weights,
                   samples * plan.computed_pixels());
}

Tensor4 approx_group_norm(const Tensor4& input, const SparseLayerContext& ctx,
                          std::span<const float> gamma, std::span<const float> beta, float eps,
                          const BinaryMask& mask) {
  check_mask_plane(mask, input, "approx_group_norm");
  if (ctx.cached_mean.empty() || ctx.cached_var.size() != ctx.cached_mean.size()) {
    throw CacheMiss("approx_group_norm: no cached statistics for " + ctx.describe());
  }
  const auto stats = static_cast<int64_t>(ctx.cached_mean.size());
  if (stats % input.n() != 0 || input.c() % (stats / input.n()) != 0) {
    throw ContractViolation("approx_group_norm: " + std::to_string(stats) +
                            " cached statistics do not fit " + input.shape().to_string());
  }
  if (static_cast<int64_t>(gamma.size()) != input.c() ||
      static_cast<int64_t>(beta.size()) != input.c()) {
    throw ContractViolation("approx_group_norm: gamma/beta length must equal channels");
  }
  const int64_t groups = stats / input.n();
  const int64_t per_group = input.c() / groups;
  Tensor4 out = scatter_base(ctx, mask, input.shape(), "approx_group_norm");
  const std::vector<int64_t> active = mask.active_indices();

  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const auto slot = static_cast<size_t>(n * groups + c / per_group);
      const float mean = ctx.cached_mean[slot];
      const float inv = inverse_std(ctx.cached_var[slot], eps);
      const float ga = gamma[static_cast<size_t>(c)];
      const float be = beta[static_cast<size_t>(c)];
      const float* src = input.plane(n, c);
      float* dst = out.plane(n, c);
      for (int64_t p : active) dst[p] = normalize_value(src[p], mean, inv, ga, be);
    }
  }
  return out;
}

Tensor4 sparse_self_attention(const Tensor4& input, const SparseLayerContext& ctx,
                              const BinaryMask& mask, const AttentionProjections& proj) {
  check_gate(ctx, "sparse_self_attention");
  check_mask_plane(mask, input, "sparse_self_attention");
  Tensor4 out = scatter_base(ctx, mask, Shape{input.n(), proj.wv.cols, input.h(), input.w()},
                             "sparse_self_attention");
  if (mask.is_empty()) return out;
  const std::vector<int64_t> active = mask.active_indices();
  const float scale = 1.0f / std::sqrt(static_cast<float>(proj.wq.cols));
  for (int64_t n = 0; n < input.n(); ++n) {
    const Matrix tokens = gather_rows(to_tokens(input, n), active);
    const Matrix q = matmul(tokens, proj.wq);
    const Matrix k = matmul(tokens, proj.wk);
    const Matrix v = matmul(tokens, proj.wv);
    scatter_rows(attention(q, k, v, scale), active, out, n);
  }
  return out;
}

Tensor4 sparse_cross_attention(const Tensor4& input, const Matrix& wq, const Matrix& text_keys,
                               const Matrix& text_values, const SparseLayerContext& ctx,
                               const BinaryMask& mask) {
  check_mask_plane(mask, input, "sparse_cross_attention");
  Tensor4 out = scatter_base(ctx, mask, Shape{input.n(), text_values.cols, input.h(), input.w()},
                             "sparse_cross_attention");
  if (mask.is_empty()) return out;
  const std::vector<int64_t> active = mask.active_indices();
  const float scale = 1.0f / std::sqrt(static_cast<float>(wq.cols));
  for (int64_t n = 0; n < input.n(); ++n) {
    const Matrix q = matmul(gather_rows(to_tokens(input, n), active), wq);
    const Matrix probs = attention_probs(q, text_keys, scale);
    scatter_rows(apply_probs(probs, text_values), active, out, n);
  }
  return out;
}

}  // namespace sparsedit

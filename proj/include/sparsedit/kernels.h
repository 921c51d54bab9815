// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Dense reference kernels. These are both the dense execution path and the
// oracle the sparse kernels are checked against, so every reduction runs in
// a fixed order:
//   convolution      kernel row -> kernel col -> input channel, bias last
//   group norm stats pixel-major within a group, accumulated in double
//   attention        feature dim for scores, key index for the weighted sum

#ifndef SPARSEDIT_KERNELS_H_
#define SPARSEDIT_KERNELS_H_

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsedit/tensor.h"

namespace sparsedit {

struct ConvWeights {
  Tensor4 weight;  // (c_out, c_in, h_k, w_k)
  std::vector<float> bias;
  int64_t padding = 0;

  int64_t c_out() const { return weight.n(); }
  int64_t c_in() const { return weight.c(); }
  int64_t kernel_h() const { return weight.h(); }
  int64_t kernel_w() const { return weight.w(); }

  // Odd kernel, matching bias, same-size padding.
  void validate() const;
};

// Same-padded stride-1 cross-correlation.
Tensor4 conv2d(const Tensor4& input, const ConvWeights& weights);

// Unpadded ("valid") convolution of one sample: output is
// (c_out, h - h_k + 1, w - w_k + 1). conv2d is this applied to the
// zero-padded input, so block-wise evaluation rounds identically.
void conv2d_valid(const float* input, int64_t c_in, int64_t h, int64_t w,
                  const ConvWeights& weights, float* output);

struct GroupNormResult {
  Tensor4 output;
  std::vector<float> mean;  // (n * groups), sample-major
  std::vector<float> var;   // population variance
};

GroupNormResult group_norm(const Tensor4& input, int64_t groups,
                           std::span<const float> gamma,
                           std::span<const float> beta, float eps);

// y = gamma * (x - mean) * inv_std + beta, shared by the exact and the
// cached-statistics normalization.
inline float inverse_std(float var, float eps) {
  return 1.0f / std::sqrt(var + eps);
}
inline float normalize_value(float x, float mean, float inv_std, float gamma,
                             float beta) {
  return gamma * ((x - mean) * inv_std) + beta;
}

// softmax(q k^T * scale) v, row max subtracted before exponentiation.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, float scale);

// The two halves of attention(), for callers that keep or edit the map.
// attention(q,k,v,s) is bit-identical to apply_probs(attention_probs(q,k,s), v).
Matrix attention_probs(const Matrix& q, const Matrix& k, float scale);
Matrix apply_probs(const Matrix& probs, const Matrix& v);

// Token-wise projections of a self-attention layer, each (in_dim x dim).
struct AttentionProjections {
  Matrix wq;
  Matrix wk;
  Matrix wv;
};

// Dense self-attention over all h*w tokens of each sample. Output has
// wv.cols channels.
Tensor4 self_attention_layer(const Tensor4& input, const AttentionProjections& proj);

// Dense cross-attention of image tokens against projected text keys/values.
// When `probs_out` is set it receives the (h*w x text tokens) map of the
// last sample.
Tensor4 cross_attention_layer(const Tensor4& input, const Matrix& wq, const Matrix& text_keys,
                              const Matrix& text_values, Matrix* probs_out = nullptr);

// Elementwise helpers used between layers. These are dense and not counted
// in MACs.
Tensor4 avg_pool2x(const Tensor4& input);
Tensor4 upsample2x(const Tensor4& input);
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

// Multiply-accumulate counts.
int64_t macs_conv(const Shape& input, const ConvWeights& weights,
                  int64_t active_output_pixels);
int64_t macs_attention(int64_t q_tokens, int64_t kv_tokens, int64_t dim);
// Token-wise linear projection (a 1x1 convolution over `tokens` tokens).
int64_t macs_projection(int64_t tokens, int64_t in_dim, int64_t out_dim);

}  // namespace sparsedit

#endif  // SPARSEDIT_KERNELS_H_

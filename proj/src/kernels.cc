// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/kernels.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sparsedit/errors.h"

namespace sparsedit {

void ConvWeights::validate() const {
  if (weight.empty() || kernel_h() % 2 == 0 || kernel_w() % 2 == 0) {
    throw ContractViolation("convolution kernel must be odd-sized, got " +
                            weight.shape().to_string());
  }
  if (static_cast<int64_t>(bias.size()) != c_out()) {
    throw ContractViolation("bias length " + std::to_string(bias.size()) +
                            " != c_out " + std::to_string(c_out()));
  }
  if (kernel_h() != kernel_w() || padding != (kernel_h() - 1) / 2) {
    throw ContractViolation("padding " + std::to_string(padding) +
                            " does not give same-size output for kernel " +
                            weight.shape().to_string());
  }
}

void conv2d_valid(const float* input, int64_t c_in, int64_t h, int64_t w,
                  const ConvWeights& weights, float* output) {
  const int64_t kh = weights.kernel_h();
  const int64_t kw = weights.kernel_w();
  const int64_t oh = h - kh + 1;
  const int64_t ow = w - kw + 1;
  const int64_t out_plane = oh * ow;
  const float* wt = weights.weight.data().data();

  for (int64_t co = 0; co < weights.c_out(); ++co) {
    float* acc = output + co * out_plane;
    std::fill(acc, acc + out_plane, 0.0f);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        for (int64_t ci = 0; ci < c_in; ++ci) {
          const float k = wt[((co * c_in + ci) * kh + ky) * kw + kx];
          const float* src = input + ci * h * w + ky * w + kx;
          for (int64_t y = 0; y < oh; ++y) {
            float* dst = acc + y * ow;
            const float* row = src + y * w;
            for (int64_t x = 0; x < ow; ++x) dst[x] += k * row[x];
          }
        }
      }
    }
    const float b = weights.bias[static_cast<size_t>(co)];
    for (int64_t i = 0; i < out_plane; ++i) acc[i] += b;
  }
}

Tensor4 conv2d(const Tensor4& input, const ConvWeights& weights) {
  weights.validate();
  if (input.c() != weights.c_in()) {
    throw ContractViolation("conv2d input " + input.shape().to_string() +
                            " does not match weights " +
                            weights.weight.shape().to_string());
  }
  const int64_t pad = weights.padding;
  const int64_t ph = input.h() + 2 * pad;
  const int64_t pw = input.w() + 2 * pad;
  std::vector<float> padded(static_cast<size_t>(input.c() * ph * pw), 0.0f);
  Tensor4 out(input.n(), weights.c_out(), input.h(), input.w());

  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      const float* src = input.plane(n, c);
      float* dst = padded.data() + c * ph * pw;
      for (int64_t y = 0; y < input.h(); ++y) {
        std::copy(src + y * input.w(), src + (y + 1) * input.w(),
                  dst + (y + pad) * pw + pad);
      }
    }
    conv2d_valid(padded.data(), input.c(), ph, pw, weights, out.plane(n, 0));
  }
  return out;
}

GroupNormResult group_norm(const Tensor4& input, int64_t groups,
                           std::span<const float> gamma,
                           std::span<const float> beta, float eps) {
  if (groups <= 0 || input.c() % groups != 0) {
    throw ContractViolation("group_norm: " + std::to_string(input.c()) +
                            " channels not divisible into " +
                            std::to_string(groups) + " groups");
  }
  if (static_cast<int64_t>(gamma.size()) != input.c() ||
      static_cast<int64_t>(beta.size()) != input.c()) {
    throw ContractViolation("group_norm: gamma/beta length must equal channels");
  }
  const int64_t per_group = input.c() / groups;
  const int64_t plane = input.h() * input.w();
  const double count = static_cast<double>(per_group * plane);

  GroupNormResult r;
  r.output = Tensor4(input.shape());
  r.mean.resize(static_cast<size_t>(input.n() * groups));
  r.var.resize(static_cast<size_t>(input.n() * groups));

  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      double sum = 0.0;
      for (int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
        const float* p = input.plane(n, c);
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mean = sum / count;
      double sq = 0.0;
      for (int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
        const float* p = input.plane(n, c);
        for (int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      const size_t slot = static_cast<size_t>(n * groups + g);
      r.mean[slot] = static_cast<float>(mean);
      r.var[slot] = static_cast<float>(sq / count);

      const float m = r.mean[slot];
      const float inv = inverse_std(r.var[slot], eps);
      for (int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
        const float* src = input.plane(n, c);
        float* dst = r.output.plane(n, c);
        const float ga = gamma[static_cast<size_t>(c)];
        const float be = beta[static_cast<size_t>(c)];
        for (int64_t i = 0; i < plane; ++i) {
          dst[i] = normalize_value(src[i], m, inv, ga, be);
        }
      }
    }
  }
  return r;
}

namespace {

void check_attention_dims(const Matrix& q, const Matrix& k) {
  if (q.cols != k.cols) {
    throw ContractViolation("attention: query dim " + std::to_string(q.cols) +
                            " != key dim " + std::to_string(k.cols));
  }
  if (k.rows == 0) throw ContractViolation("attention: no keys");
}

// Softmax probabilities of one query row against all keys. `kt` is the
// transposed key matrix (dim x keys) so the inner loop runs over keys.
void probs_row(const float* q, const Matrix& kt, float scale, float* probs) {
  const int64_t keys = kt.cols;
  std::fill(probs, probs + keys, 0.0f);
  for (int64_t d = 0; d < kt.rows; ++d) {
    const float qd = q[d];
    const float* krow = kt.row(d);
    for (int64_t j = 0; j < keys; ++j) probs[j] += qd * krow[j];
  }
  float row_max = -std::numeric_limits<float>::infinity();
  for (int64_t j = 0; j < keys; ++j) {
    probs[j] *= scale;
    row_max = std::max(row_max, probs[j]);
  }
  float total = 0.0f;
  for (int64_t j = 0; j < keys; ++j) {
    probs[j] = std::exp(probs[j] - row_max);
    total += probs[j];
  }
  for (int64_t j = 0; j < keys; ++j) probs[j] /= total;
}

void apply_row(const float* probs, const Matrix& v, float* out) {
  std::fill(out, out + v.cols, 0.0f);
  for (int64_t j = 0; j < v.rows; ++j) {
    const float p = probs[j];
    const float* vrow = v.row(j);
    for (int64_t d = 0; d < v.cols; ++d) out[d] += p * vrow[d];
  }
}

}  // namespace

Matrix attention_probs(const Matrix& q, const Matrix& k, float scale) {
  check_attention_dims(q, k);
  const Matrix kt = transpose(k);
  Matrix probs(q.rows, k.rows);
  for (int64_t i = 0; i < q.rows; ++i) probs_row(q.row(i), kt, scale, probs.row(i));
  return probs;
}

Matrix apply_probs(const Matrix& probs, const Matrix& v) {
  if (probs.cols != v.rows) {
    throw ContractViolation("attention: " + std::to_string(probs.cols) +
                            " keys but " + std::to_string(v.rows) + " values");
  }
  Matrix out(probs.rows, v.cols);
  for (int64_t i = 0; i < probs.rows; ++i) apply_row(probs.row(i), v, out.row(i));
  return out;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, float scale) {
  check_attention_dims(q, k);
  if (k.rows != v.rows) {
    throw ContractViolation("attention: " + std::to_string(k.rows) +
                            " keys but " + std::to_string(v.rows) + " values");
  }
  const Matrix kt = transpose(k);
  Matrix out(q.rows, v.cols);
  std::vector<float> probs(static_cast<size_t>(k.rows));
  for (int64_t i = 0; i < q.rows; ++i) {
    probs_row(q.row(i), kt, scale, probs.data());
    apply_row(probs.data(), v, out.row(i));
  }
  return out;
}

Tensor4 self_attention_layer(const Tensor4& input, const AttentionProjections& proj) {
  Tensor4 out(input.n(), proj.wv.cols, input.h(), input.w());
  const float scale = 1.0f / std::sqrt(static_cast<float>(proj.wq.cols));
  for (int64_t n = 0; n < input.n(); ++n) {
    const Matrix tokens = to_tokens(input, n);
    const Matrix q = matmul(tokens, proj.wq);
    const Matrix k = matmul(tokens, proj.wk);
    const Matrix v = matmul(tokens, proj.wv);
    from_tokens(attention(q, k, v, scale), out, n);
  }
  return out;
}

Tensor4 cross_attention_layer(const Tensor4& input, const Matrix& wq, const Matrix& text_keys,
                              const Matrix& text_values, Matrix* probs_out) {
  Tensor4 out(input.n(), text_values.cols, input.h(), input.w());
  const float scale = 1.0f / std::sqrt(static_cast<float>(wq.cols));
  for (int64_t n = 0; n < input.n(); ++n) {
    const Matrix q = matmul(to_tokens(input, n), wq);
    Matrix probs = attention_probs(q, text_keys, scale);
    from_tokens(apply_probs(probs, text_values), out, n);
    if (probs_out != nullptr) *probs_out = std::move(probs);
  }
  return out;
}

Tensor4 avg_pool2x(const Tensor4& input) {
  if (input.h() % 2 != 0 || input.w() % 2 != 0) {
    throw ContractViolation("avg_pool2x needs even spatial dims, got " +
                            input.shape().to_string());
  }
  Tensor4 out(input.n(), input.c(), input.h() / 2, input.w() / 2);
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      for (int64_t y = 0; y < out.h(); ++y) {
        for (int64_t x = 0; x < out.w(); ++x) {
          const float s = input.at(n, c, 2 * y, 2 * x) + input.at(n, c, 2 * y, 2 * x + 1) +
                          input.at(n, c, 2 * y + 1, 2 * x) +
                          input.at(n, c, 2 * y + 1, 2 * x + 1);
          out.at(n, c, y, x) = 0.25f * s;
        }
      }
    }
  }
  return out;
}

Tensor4 upsample2x(const Tensor4& input) {
  Tensor4 out(input.n(), input.c(), input.h() * 2, input.w() * 2);
  for (int64_t n = 0; n < input.n(); ++n) {
    for (int64_t c = 0; c < input.c(); ++c) {
      for (int64_t y = 0; y < out.h(); ++y) {
        for (int64_t x = 0; x < out.w(); ++x) out.at(n, c, y, x) = input.at(n, c, y / 2, x / 2);
      }
    }
  }
  return out;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ContractViolation("concat_channels: " + a.shape().to_string() + " vs " +
                            b.shape().to_string());
  }
  Tensor4 out(a.n(), a.c() + b.c(), a.h(), a.w());
  const int64_t plane = a.h() * a.w();
  for (int64_t n = 0; n < a.n(); ++n) {
    std::copy(a.plane(n, 0), a.plane(n, 0) + a.c() * plane, out.plane(n, 0));
    std::copy(b.plane(n, 0), b.plane(n, 0) + b.c() * plane, out.plane(n, a.c()));
  }
  return out;
}

int64_t macs_conv([[maybe_unused]] const Shape& input, const ConvWeights& weights,
                  int64_t active_output_pixels) {
  return active_output_pixels * weights.c_out() * weights.c_in() *
         weights.kernel_h() * weights.kernel_w();
}

int64_t macs_attention(int64_t q_tokens, int64_t kv_tokens, int64_t dim) {
  return 2 * q_tokens * kv_tokens * dim;
}

int64_t macs_projection(int64_t tokens, int64_t in_dim, int64_t out_dim) {
  return tokens * in_dim * out_dim;
}

}  // namespace sparsedit

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sparsedit/errors.h"

namespace sparsedit {

std::string Shape::to_string() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, float fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ContractViolation("negative tensor dimension " + shape.to_string());
  }
  data_.assign(static_cast<size_t>(shape.numel()), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape.numel()) {
    throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape.to_string());
  }
}

void Tensor4::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

bool operator==(const Tensor4& a, const Tensor4& b) {
  return a.shape_ == b.shape_ && a.data_ == b.data_;
}

bool bit_equal(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("max_abs_diff shape mismatch " + a.shape().to_string() +
                            " vs " + b.shape().to_string());
  }
  float worst = 0.0f;
  for (size_t i = 0; i < a.data().size(); ++i) {
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int64_t r = 0; r < m.rows; ++r) {
    for (int64_t c = 0; c < m.cols; ++c) out.at(c, r) = m.at(r, c);
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ContractViolation("matmul inner dimension mismatch: " +
                            std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                            " * " + std::to_string(b.rows) + "x" +
                            std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (int64_t r = 0; r < a.rows; ++r) {
    float* dst = out.row(r);
    const float* lhs = a.row(r);
    for (int64_t k = 0; k < a.cols; ++k) {
      const float s = lhs[k];
      const float* rhs = b.row(k);
      for (int64_t c = 0; c < b.cols; ++c) dst[c] += s * rhs[c];
    }
  }
  return out;
}

Matrix to_tokens(const Tensor4& t, int64_t in) {
  const int64_t tokens = t.h() * t.w();
  Matrix m(tokens, t.c());
  for (int64_t c = 0; c < t.c(); ++c) {
    const float* src = t.plane(in, c);
    for (int64_t p = 0; p < tokens; ++p) m.data[static_cast<size_t>(p * t.c() + c)] = src[p];
  }
  return m;
}

void from_tokens(const Matrix& tokens, Tensor4& t, int64_t in) {
  if (tokens.rows != t.h() * t.w() || tokens.cols != t.c()) {
    throw ContractViolation("token matrix does not match feature map " +
                            t.shape().to_string());
  }
  for (int64_t c = 0; c < t.c(); ++c) {
    float* dst = t.plane(in, c);
    for (int64_t p = 0; p < tokens.rows; ++p) dst[p] = tokens.at(p, c);
  }
}

uint64_t content_hash(const Tensor4& t) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, size_t len) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const int64_t dims[4] = {t.n(), t.c(), t.h(), t.w()};
  mix(dims, sizeof(dims));
  mix(t.data().data(), t.data().size() * sizeof(float));
  return h;
}

}  // namespace sparsedit

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPARSEDIT_TENSOR_H_
#define SPARSEDIT_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sparsedit {

struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense (n, c, h, w) feature map, row-major n -> c -> h -> w.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, float fill = 0.0f);
  Tensor4(Shape shape, std::vector<float> data);
  Tensor4(int64_t n, int64_t c, int64_t h, int64_t w, float fill = 0.0f)
      : Tensor4(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int64_t n() const { return shape_.n; }
  int64_t c() const { return shape_.c; }
  int64_t h() const { return shape_.h; }
  int64_t w() const { return shape_.w; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  int64_t offset(int64_t in, int64_t ic, int64_t y, int64_t x) const {
    return ((in * shape_.c + ic) * shape_.h + y) * shape_.w + x;
  }
  float& at(int64_t in, int64_t ic, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(offset(in, ic, y, x))];
  }
  float at(int64_t in, int64_t ic, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(offset(in, ic, y, x))];
  }

  // Pointer to the (in, ic) plane.
  float* plane(int64_t in, int64_t ic) { return data_.data() + offset(in, ic, 0, 0); }
  const float* plane(int64_t in, int64_t ic) const {
    return data_.data() + offset(in, ic, 0, 0);
  }

  void fill(float value);
  bool all_finite() const;

  friend bool operator==(const Tensor4& a, const Tensor4& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Bitwise equality; distinguishes -0.0f from 0.0f and compares NaN payloads.
bool bit_equal(const Tensor4& a, const Tensor4& b);
float max_abs_diff(const Tensor4& a, const Tensor4& b);

// Row-major token matrix (rows = tokens, cols = features).
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int64_t r, int64_t c, float fill = 0.0f)
      : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

  float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
  float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
  float* row(int64_t r) { return data.data() + r * cols; }
  const float* row(int64_t r) const { return data.data() + r * cols; }
};

Matrix transpose(const Matrix& m);

// out = a * b. Summation over the shared dimension in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);

// Views sample `in` of a feature map as (h*w) tokens of c features, and back.
Matrix to_tokens(const Tensor4& t, int64_t in = 0);
void from_tokens(const Matrix& tokens, Tensor4& t, int64_t in = 0);

// 64-bit FNV-1a over the raw payload bytes; used for output fingerprints.
uint64_t content_hash(const Tensor4& t);

}  // namespace sparsedit

#endif  // SPARSEDIT_TENSOR_H_

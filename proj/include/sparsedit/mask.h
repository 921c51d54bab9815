// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

// Edit-mask generation: accumulate latent differences between the cached and
// the fresh generation, threshold them with OTSU, and derive the
// lower-resolution masks the sparse layers use.

#ifndef SPARSEDIT_MASK_H_
#define SPARSEDIT_MASK_H_

#include <cstdint>
#include <span>
#include <vector>

#include "sparsedit/tensor.h"

namespace sparsedit {

inline constexpr int kDefaultDiffWindowStart = 5;
inline constexpr int kDefaultDiffWindowEnd = 10;
inline constexpr int kMaxDiffWindowStep = 10;
inline constexpr int kOtsuCandidates = 256;

// Min-max normalized accumulated difference. A constant raw map is
// `degenerate` and stored as all zeros.
struct DiffMap {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> values;
  bool degenerate = false;

  float at(int64_t y, int64_t x) const { return values[static_cast<size_t>(y * w + x)]; }
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int64_t h, int64_t w, bool value = false);

  static BinaryMask full(int64_t h, int64_t w) { return BinaryMask(h, w, true); }

  int64_t h() const { return h_; }
  int64_t w() const { return w_; }
  int64_t pixels() const { return h_ * w_; }
  int64_t active_count() const { return active_; }
  double sparsity() const {
    return pixels() == 0 ? 0.0 : static_cast<double>(active_) / static_cast<double>(pixels());
  }
  bool is_empty() const { return active_ == 0; }
  bool is_full() const { return active_ == pixels(); }

  bool get(int64_t y, int64_t x) const { return bits_[static_cast<size_t>(y * w_ + x)] != 0; }
  bool get_flat(int64_t i) const { return bits_[static_cast<size_t>(i)] != 0; }
  void set(int64_t y, int64_t x, bool value);

  // Flat (y * w + x) indices of active pixels, ascending.
  std::vector<int64_t> active_indices() const;

  // n = c = 1 tensor with values {0, 1}.
  Tensor4 to_tensor() const;
  // Any nonzero value is active. Requires n = c = 1.
  static BinaryMask from_tensor(const Tensor4& t);

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.bits_ == b.bits_;
  }

 private:
  int64_t h_ = 0;
  int64_t w_ = 0;
  int64_t active_ = 0;
  std::vector<uint8_t> bits_;
};

// Level 0 is the latent-resolution mask; each further level OR-pools 2x2.
struct MaskPyramid {
  std::vector<BinaryMask> levels;

  const BinaryMask& at(size_t level) const { return levels.at(level); }
  size_t size() const { return levels.size(); }
};

// Steps are 1-based: x_steps[i] / y_steps[i] hold step i + 1, and both lists
// must reach at least t2. Per pixel, sums the channel-mean of |X_t - Y_t| over
// t1..t2 and min-max normalizes to [0, 1].
DiffMap accumulate_diff(std::span<const Tensor4> x_steps, std::span<const Tensor4> y_steps,
                        int t1 = kDefaultDiffWindowStart, int t2 = kDefaultDiffWindowEnd);

enum class MaskStatus { kEdit, kNoEdit };

struct OtsuResult {
  float epsilon = 1.0f;
  double objective = 0.0;
  BinaryMask mask;
  MaskStatus status = MaskStatus::kNoEdit;
};

// Candidate thresholds (k + 0.5) / 256 for k = 0..255.
std::vector<float> otsu_candidate_grid();

// Maximizes the between-class variance over the candidate grid; ties go to
// the smaller threshold. A degenerate map yields an empty mask, epsilon 1 and
// MaskStatus::kNoEdit.
OtsuResult otsu_threshold(const DiffMap& diff);

// {pixels with diff >= epsilon}
BinaryMask threshold_mask(const DiffMap& diff, float epsilon);

// Square structuring element of side 2 * radius + 1, clipped at the borders.
BinaryMask dilate(const BinaryMask& mask, int radius);

MaskPyramid build_pyramid(const BinaryMask& mask, int levels);

// A centered square mask of round(sqrt(fraction * h * w)) pixels per side.
BinaryMask square_mask(int64_t h, int64_t w, double fraction);

}  // namespace sparsedit

#endif  // SPARSEDIT_MASK_H_

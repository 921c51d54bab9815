// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/mask.h"

#include <algorithm>
#include <cmath>

#include "sparsedit/errors.h"

namespace sparsedit {

BinaryMask::BinaryMask(int64_t h, int64_t w, bool value)
    : h_(h), w_(w), active_(value ? h * w : 0),
      bits_(static_cast<size_t>(h * w), value ? 1 : 0) {
  if (h < 0 || w < 0) throw ContractViolation("negative mask size");
}

void BinaryMask::set(int64_t y, int64_t x, bool value) {
  uint8_t& b = bits_[static_cast<size_t>(y * w_ + x)];
  if ((b != 0) == value) return;
  b = value ? 1 : 0;
  active_ += value ? 1 : -1;
}

std::vector<int64_t> BinaryMask::active_indices() const {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(active_));
  for (int64_t i = 0; i < pixels(); ++i) {
    if (bits_[static_cast<size_t>(i)] != 0) out.push_back(i);
  }
  return out;
}

Tensor4 BinaryMask::to_tensor() const {
  Tensor4 t(1, 1, h_, w_);
  for (int64_t i = 0; i < pixels(); ++i) t.data()[static_cast<size_t>(i)] = get_flat(i) ? 1.0f : 0.0f;
  return t;
}

BinaryMask BinaryMask::from_tensor(const Tensor4& t) {
  if (t.n() != 1 || t.c() != 1) {
    throw ContractViolation("mask tensor must have n = c = 1, got " + t.shape().to_string());
  }
  BinaryMask m(t.h(), t.w());
  for (int64_t y = 0; y < t.h(); ++y) {
    for (int64_t x = 0; x < t.w(); ++x) m.set(y, x, t.at(0, 0, y, x) != 0.0f);
  }
  return m;
}

DiffMap accumulate_diff(std::span<const Tensor4> x_steps, std::span<const Tensor4> y_steps,
                        int t1, int t2) {
  if (t1 < 1 || t1 > t2 || t2 > kMaxDiffWindowStep) {
    throw ContractViolation("diff window must satisfy 1 <= t1 <= t2 <= 10, got t1=" +
                            std::to_string(t1) + " t2=" + std::to_string(t2));
  }
  if (static_cast<int>(x_steps.size()) < t2 || static_cast<int>(y_steps.size()) < t2) {
    throw ContractViolation("latent sequences do not cover step " + std::to_string(t2));
  }
  const Shape shape = x_steps[static_cast<size_t>(t1 - 1)].shape();
  if (shape.n != 1 || shape.numel() == 0) {
    throw ContractViolation("diff latents must be single non-empty samples, got " +
                            shape.to_string());
  }
  const int64_t plane = shape.h * shape.w;
  std::vector<double> acc(static_cast<size_t>(plane), 0.0);

  for (int t = t1; t <= t2; ++t) {
    const Tensor4& x = x_steps[static_cast<size_t>(t - 1)];
    const Tensor4& y = y_steps[static_cast<size_t>(t - 1)];
    if (x.shape() != shape || y.shape() != shape) {
      throw ContractViolation("step " + std::to_string(t) + " latent shapes " +
                              x.shape().to_string() + " / " + y.shape().to_string() +
                              " differ from " + shape.to_string());
    }
    for (int64_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int64_t c = 0; c < shape.c; ++c) {
        s += std::fabs(static_cast<double>(x.plane(0, c)[p]) - static_cast<double>(y.plane(0, c)[p]));
      }
      acc[static_cast<size_t>(p)] += s / static_cast<double>(shape.c);
    }
  }

  DiffMap d;
  d.h = shape.h;
  d.w = shape.w;
  d.values.assign(static_cast<size_t>(plane), 0.0f);
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  if (*hi == *lo) {
    d.degenerate = true;
    return d;
  }
  const double lo_v = *lo;
  const double range = *hi - *lo;
  for (int64_t p = 0; p < plane; ++p) {
    d.values[static_cast<size_t>(p)] = static_cast<float>((acc[static_cast<size_t>(p)] - lo_v) / range);
  }
  return d;
}

std::vector<float> otsu_candidate_grid() {
  std::vector<float> grid(kOtsuCandidates);
  for (int k = 0; k < kOtsuCandidates; ++k) {
    grid[static_cast<size_t>(k)] = (static_cast<float>(k) + 0.5f) / static_cast<float>(kOtsuCandidates);
  }
  return grid;
}

BinaryMask threshold_mask(const DiffMap& diff, float epsilon) {
  BinaryMask m(diff.h, diff.w);
  for (int64_t y = 0; y < diff.h; ++y) {
    for (int64_t x = 0; x < diff.w; ++x) m.set(y, x, diff.at(y, x) >= epsilon);
  }
  return m;
}

OtsuResult otsu_threshold(const DiffMap& diff) {
  OtsuResult r;
  if (diff.degenerate || diff.values.empty()) {
    r.mask = BinaryMask(diff.h, diff.w);
    return r;
  }

  std::vector<float> sorted = diff.values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];
  const double total = static_cast<double>(sorted.size());

  bool found = false;
  for (float eps : otsu_candidate_grid()) {
    const auto below = static_cast<size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), eps) - sorted.begin());
    if (below == 0 || below == sorted.size()) continue;
    const double n1 = static_cast<double>(below);
    const double n2 = total - n1;
    const double mean_a = prefix[below] / n1;
    const double mean_b = (prefix.back() - prefix[below]) / n2;
    const double gap = mean_a - mean_b;
    const double objective = (n1 * n2) / (total * total) * gap * gap;
    if (!found || objective > r.objective) {
      found = true;
      r.objective = objective;
      r.epsilon = eps;
    }
  }
  if (!found) {
    // Every candidate leaves one class empty; only possible when all values
    // fall in one grid cell, which min-max normalization rules out.
    r.mask = BinaryMask(diff.h, diff.w);
    return r;
  }
  r.mask = threshold_mask(diff, r.epsilon);
  r.status = MaskStatus::kEdit;
  return r;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ContractViolation("dilation radius must be >= 0");
  if (radius == 0) return mask;
  const int64_t h = mask.h();
  const int64_t w = mask.w();
  // Separable: horizontal pass, then vertical.
  std::vector<uint8_t> rows(static_cast<size_t>(h * w), 0);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      if (!mask.get(y, x)) continue;
      const int64_t x0 = std::max<int64_t>(0, x - radius);
      const int64_t x1 = std::min<int64_t>(w - 1, x + radius);
      for (int64_t xx = x0; xx <= x1; ++xx) rows[static_cast<size_t>(y * w + xx)] = 1;
    }
  }
  BinaryMask out(h, w);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      if (!rows[static_cast<size_t>(y * w + x)]) continue;
      const int64_t y0 = std::max<int64_t>(0, y - radius);
      const int64_t y1 = std::min<int64_t>(h - 1, y + radius);
      for (int64_t yy = y0; yy <= y1; ++yy) out.set(yy, x, true);
    }
  }
  return out;
}

MaskPyramid build_pyramid(const BinaryMask& mask, int levels) {
  if (levels < 1) throw ContractViolation("pyramid needs at least one level");
  const int64_t factor = int64_t{1} << (levels - 1);
  if (mask.h() % factor != 0 || mask.w() % factor != 0) {
    throw ContractViolation("mask " + std::to_string(mask.h()) + "x" + std::to_string(mask.w()) +
                            " is not divisible by 2^" + std::to_string(levels - 1));
  }
  MaskPyramid p;
  p.levels.push_back(mask);
  for (int l = 1; l < levels; ++l) {
    const BinaryMask& prev = p.levels.back();
    BinaryMask next(prev.h() / 2, prev.w() / 2);
    for (int64_t y = 0; y < next.h(); ++y) {
      for (int64_t x = 0; x < next.w(); ++x) {
        next.set(y, x, prev.get(2 * y, 2 * x) || prev.get(2 * y, 2 * x + 1) ||
                           prev.get(2 * y + 1, 2 * x) || prev.get(2 * y + 1, 2 * x + 1));
      }
    }
    p.levels.push_back(std::move(next));
  }
  return p;
}

BinaryMask square_mask(int64_t h, int64_t w, double fraction) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("edit size must be in [0, 1], got " + std::to_string(fraction));
  }
  BinaryMask m(h, w);
  const auto side_f = std::sqrt(fraction * static_cast<double>(h * w));
  const int64_t side_h = std::min<int64_t>(h, std::llround(side_f));
  const int64_t side_w = std::min<int64_t>(w, std::llround(side_f));
  const int64_t y0 = (h - side_h) / 2;
  const int64_t x0 = (w - side_w) / 2;
  for (int64_t y = y0; y < y0 + side_h; ++y) {
    for (int64_t x = x0; x < x0 + side_w; ++x) m.set(y, x, true);
  }
  return m;
}

}  // namespace sparsedit

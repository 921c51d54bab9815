// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/macs.h"

#include <limits>

#include "sparsedit/errors.h"

namespace sparsedit {

void MacsReport::add(int64_t layer_id, const std::string& kind, bool gated, int64_t dense_macs,
                     int64_t sparse_macs) {
  if (sparse_macs > dense_macs || sparse_macs < 0) {
    throw ContractViolation("layer " + std::to_string(layer_id) + ": sparse MACs " +
                            std::to_string(sparse_macs) + " exceed dense MACs " +
                            std::to_string(dense_macs));
  }
  LayerMacs& rec = layers_[layer_id];
  rec.layer_id = layer_id;
  rec.kind = kind;
  rec.gated = gated;
  rec.dense_macs += dense_macs;
  rec.sparse_macs += sparse_macs;
}

std::vector<LayerMacs> MacsReport::records() const {
  std::vector<LayerMacs> out;
  out.reserve(layers_.size());
  for (const auto& [id, rec] : layers_) out.push_back(rec);
  return out;
}

int64_t MacsReport::dense_total() const {
  int64_t total = 0;
  for (const auto& [id, rec] : layers_) total += rec.dense_macs;
  return total;
}

int64_t MacsReport::sparse_total() const {
  int64_t total = 0;
  for (const auto& [id, rec] : layers_) total += rec.sparse_macs;
  return total;
}

double MacsReport::ratio() const {
  const int64_t dense = dense_total();
  const int64_t sparse = sparse_total();
  if (sparse == 0) return dense == 0 ? 1.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(dense) / static_cast<double>(sparse);
}

}  // namespace sparsedit

// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPARSEDIT_MACS_H_
#define SPARSEDIT_MACS_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sparsedit {

struct LayerMacs {
  int64_t layer_id = 0;
  std::string kind;
  bool gated = false;
  int64_t dense_macs = 0;
  int64_t sparse_macs = 0;
};

// Per-layer dense vs. executed MAC counts, accumulated over however many
// steps the caller records.
class MacsReport {
 public:
  void add(int64_t layer_id, const std::string& kind, bool gated, int64_t dense_macs,
           int64_t sparse_macs);

  std::vector<LayerMacs> records() const;
  int64_t dense_total() const;
  int64_t sparse_total() const;
  // dense_total / sparse_total; 1 when nothing was recorded.
  double ratio() const;
  bool empty() const { return layers_.empty(); }

 private:
  std::map<int64_t, LayerMacs> layers_;
};

}  // namespace sparsedit

#endif  // SPARSEDIT_MACS_H_

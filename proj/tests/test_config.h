// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPARSEDIT_TESTS_TEST_CONFIG_H_
#define SPARSEDIT_TESTS_TEST_CONFIG_H_

#include "sparsedit/unet.h"

namespace sparsedit::testing {

// 32x32 latent, three levels: 32 and 16 are gated, 8 runs dense.
inline UNetConfig small_config() {
  UNetConfig c;
  c.latent_h = 32;
  c.latent_w = 32;
  c.channels = {8, 16, 16};
  c.steps = 6;
  c.seed = 7;
  return c;
}

}  // namespace sparsedit::testing

#endif  // SPARSEDIT_TESTS_TEST_CONFIG_H_

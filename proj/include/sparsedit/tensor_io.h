// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPARSEDIT_TENSOR_IO_H_
#define SPARSEDIT_TENSOR_IO_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "sparsedit/tensor.h"

namespace sparsedit {

// Fixture layout: magic "FT4\0", four little-endian uint64 dims (n, c, h, w),
// then the float32 little-endian payload.
inline constexpr char kTensorMagic[4] = {'F', 'T', '4', '\0'};

std::vector<uint8_t> encode_tensor(const Tensor4& t);
Tensor4 decode_tensor(const uint8_t* bytes, size_t len);

void write_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 read_tensor(const std::filesystem::path& path);

// Binary greyscale PGM (P5). Values are clamped to [0, 1] and scaled to 255.
void write_pgm(const std::filesystem::path& path, const Tensor4& plane);
// Reads P5 with maxval <= 255 into (1, 1, h, w), scaled to [0, 1].
Tensor4 read_pgm(const std::filesystem::path& path);

// Little-endian primitives shared with the spill-file writer.
void put_u64(std::vector<uint8_t>& out, uint64_t v);
void put_f32(std::vector<uint8_t>& out, float v);
uint64_t get_u64(const uint8_t* p);
float get_f32(const uint8_t* p);

}  // namespace sparsedit

#endif  // SPARSEDIT_TENSOR_IO_H_

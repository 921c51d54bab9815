// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsedit/tensor_io.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "sparsedit/errors.h"

namespace sparsedit {

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  const auto bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

float get_f32(const uint8_t* p) {
  uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

std::vector<uint8_t> encode_tensor(const Tensor4& t) {
  std::vector<uint8_t> out;
  out.reserve(4 + 32 + t.data().size() * 4);
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u64(out, static_cast<uint64_t>(t.n()));
  put_u64(out, static_cast<uint64_t>(t.c()));
  put_u64(out, static_cast<uint64_t>(t.h()));
  put_u64(out, static_cast<uint64_t>(t.w()));
  for (float v : t.data()) put_f32(out, v);
  return out;
}

Tensor4 decode_tensor(const uint8_t* bytes, size_t len) {
  if (len < 36 || std::memcmp(bytes, kTensorMagic, 4) != 0) {
    throw IoError("not an FT4 tensor (bad magic or truncated header)");
  }
  Shape s{static_cast<int64_t>(get_u64(bytes + 4)), static_cast<int64_t>(get_u64(bytes + 12)),
          static_cast<int64_t>(get_u64(bytes + 20)), static_cast<int64_t>(get_u64(bytes + 28))};
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 ||
      len != 36 + static_cast<size_t>(s.numel()) * 4) {
    throw IoError("FT4 payload length does not match header shape " + s.to_string());
  }
  std::vector<float> data(static_cast<size_t>(s.numel()));
  for (size_t i = 0; i < data.size(); ++i) data[i] = get_f32(bytes + 36 + 4 * i);
  return Tensor4(s, std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor4& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Tensor4 read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open tensor file " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes.data(), bytes.size());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const Tensor4& plane) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << plane.w() << " " << plane.h() << "\n255\n";
  for (int64_t y = 0; y < plane.h(); ++y) {
    for (int64_t x = 0; x < plane.w(); ++x) {
      const float v = std::clamp(plane.at(0, 0, y, x), 0.0f, 1.0f);
      f.put(static_cast<char>(static_cast<uint8_t>(v * 255.0f + 0.5f)));
    }
  }
  if (!f) throw IoError("short write to " + path.string());
}

Tensor4 read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  // Header tokens are whitespace separated; '#' starts a comment line.
  auto token = [&]() {
    std::string t;
    while (f) {
      const int ch = f.get();
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(ch)) {
        if (!t.empty()) return t;
      } else if (ch != EOF) {
        t.push_back(static_cast<char>(ch));
      }
    }
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  int64_t w = 0;
  int64_t h = 0;
  int64_t maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path.string() + ": unsupported PGM geometry or maxval");
  }
  std::vector<uint8_t> raw(static_cast<size_t>(w * h));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError(path.string() + ": truncated PGM payload");
  }
  Tensor4 t(1, 1, h, w);
  for (size_t i = 0; i < raw.size(); ++i) {
    t.data()[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  }
  return t;
}

}  // namespace sparsedit

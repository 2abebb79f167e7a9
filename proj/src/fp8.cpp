// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#include "uspsim/fp8.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace uspsim {

namespace {

// Magnitude of a non-negative, non-NaN code (0x00..0x7E). Monotone in the
// code value, which the encoder's binary search relies on.
float magnitude_of(std::uint8_t code) {
  const int exp = (code >> 3) & 0xF;
  const int man = code & 0x7;
  if (exp == 0) return std::ldexp(static_cast<float>(man), -9);   // subnormal: man * 2^-9
  return std::ldexp(static_cast<float>(8 + man), exp - 10);       // (1 + man/8) * 2^(exp-7)
}

struct MagnitudeTable {
  std::array<float, 127> value{};  // codes 0x00..0x7E, strictly increasing
  MagnitudeTable() {
    for (int c = 0; c <= 0x7E; ++c) value[static_cast<std::size_t>(c)] = magnitude_of(static_cast<std::uint8_t>(c));
  }
};

const MagnitudeTable& table() {
  static const MagnitudeTable t;
  return t;
}

}  // namespace

float decode_e4m3(std::uint8_t code) {
  if (is_nan_code(code)) return std::numeric_limits<float>::quiet_NaN();
  const float mag = table().value[static_cast<std::size_t>(code & 0x7F)];
  return (code & 0x80) ? -mag : mag;
}

std::uint8_t encode_e4m3(float x) {
  if (std::isnan(x)) return std::signbit(x) ? std::uint8_t(0xFF) : kFp8NanCode;
  const std::uint8_t sign = std::signbit(x) ? std::uint8_t(0x80) : std::uint8_t(0x00);
  const float a = std::fabs(x);
  if (a >= kFp8Max) return sign | kFp8MaxCode;  // saturating cast; also absorbs inf

  const auto& vals = table().value;
  // Largest code whose value is <= a.
  int lo = 0, hi = 0x7E;
  while (lo < hi) {
    int mid = (lo + hi + 1) / 2;
    if (vals[static_cast<std::size_t>(mid)] <= a) lo = mid;
    else hi = mid - 1;
  }
  if (lo == 0x7E) return sign | kFp8MaxCode;
  const float below = vals[static_cast<std::size_t>(lo)];
  const float above = vals[static_cast<std::size_t>(lo + 1)];
  // Adjacent E4M3 values have at most 5 significant bits between them, so
  // their midpoint is exact in f32 and the comparison implements true RNE.
  const float midpoint = 0.5f * (below + above);
  if (a < midpoint) return sign | static_cast<std::uint8_t>(lo);
  if (a > midpoint) return sign | static_cast<std::uint8_t>(lo + 1);
  return sign | static_cast<std::uint8_t>((lo & 1) ? lo + 1 : lo);  // tie: even mantissa
}

Bytes QuantizedTensor::serialize() const {
  Bytes out;
  out.reserve(20 + codes.data.size());
  put_u32_le(out, static_cast<std::uint32_t>(codes.shape.b));
  put_u32_le(out, static_cast<std::uint32_t>(codes.shape.h));
  put_u32_le(out, static_cast<std::uint32_t>(codes.shape.s));
  put_u32_le(out, static_cast<std::uint32_t>(codes.shape.d));
  put_f32_le(out, scale);
  out.insert(out.end(), codes.data.begin(), codes.data.end());
  return out;
}

QuantizedTensor QuantizedTensor::deserialize(const Bytes& buf) {
  if (buf.size() < 20) {
    throw ShapeError("quantized tensor payload too short: " + std::to_string(buf.size()) +
                     " bytes, need at least 20");
  }
  Shape4 sh{get_u32_le(buf.data()), get_u32_le(buf.data() + 4), get_u32_le(buf.data() + 8),
            get_u32_le(buf.data() + 12)};
  if (static_cast<std::int64_t>(buf.size()) != 20 + sh.count()) {
    throw ShapeError("quantized tensor payload length " + std::to_string(buf.size()) +
                     " does not match shape " + sh.str());
  }
  QuantizedTensor q;
  q.scale = get_f32_le(buf.data() + 16);
  q.codes = CodeTensor(sh);
  std::copy(buf.begin() + 20, buf.end(), q.codes.data.begin());
  return q;
}

QuantizedTensor QuantizedTensor::slice_heads(std::int64_t h0, std::int64_t count) const {
  QuantizedTensor r;
  r.scale = scale;
  r.codes = codes.slice_heads(h0, count);
  return r;
}

QuantizedTensor quantize(const Tensor4& x) {
  float max_abs = 0.0f;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const float v = x.data[i];
    if (!std::isfinite(v)) {
      throw std::invalid_argument("quantize: non-finite element at flat index " +
                                  std::to_string(i));
    }
    const float a = std::fabs(v);
    if (a > max_abs) max_abs = a;
  }
  QuantizedTensor q;
  q.scale = max_abs > 0.0f ? max_abs / kFp8Max : 1.0f;
  q.codes = CodeTensor(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) q.codes.data[i] = encode_e4m3(x.data[i] / q.scale);
  return q;
}

Tensor4 dequantize(const QuantizedTensor& q) {
  Tensor4 r(q.codes.shape);
  for (std::size_t i = 0; i < q.codes.data.size(); ++i)
    r.data[i] = decode_e4m3(q.codes.data[i]) * q.scale;
  return r;
}

}  // namespace uspsim

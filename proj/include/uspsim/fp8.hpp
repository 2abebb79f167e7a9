// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "uspsim/bytes.hpp"
#include "uspsim/tensor.hpp"

namespace uspsim {

// FP8 E4M3: 1 sign, 4 exponent (bias 7), 3 mantissa. No infinities; the
// all-ones magnitude pattern (S.1111.111) is NaN; subnormals down to 2^-9.
// Largest finite magnitude is 448.
inline constexpr float kFp8Max = 448.0f;
inline constexpr std::uint8_t kFp8MaxCode = 0x7E;
inline constexpr std::uint8_t kFp8NanCode = 0x7F;

inline bool is_nan_code(std::uint8_t code) { return (code & 0x7F) == 0x7F; }

// Round-to-nearest-even cast into E4M3. Magnitudes above 448 saturate to
// +-448; +-0 keeps its sign; NaN maps to the NaN code. Total function.
std::uint8_t encode_e4m3(float x);

// Exact value of an E4M3 code (NaN pattern decodes to quiet NaN).
float decode_e4m3(std::uint8_t code);

// Per-tensor scaled FP8 payload: codes plus one positive scale such that
// x ~= decode(code) * scale elementwise, with scale = max|x| / 448.
struct QuantizedTensor {
  CodeTensor codes;    // same [B,H,S,D] layout as the source tensor
  float scale = 1.0f;  // strictly positive (1.0 for an all-zero source)

  const Shape4& shape() const { return codes.shape; }

  // File/report layout: 16-byte header (four u32 LE shape fields),
  // 4-byte f32 LE scale, then the raw codes.
  Bytes serialize() const;
  static QuantizedTensor deserialize(const Bytes& buf);

  QuantizedTensor slice_heads(std::int64_t h0, std::int64_t count) const;
};

// scale = max|x|/448 (1.0 when the tensor is all zero), codes = RNE cast of
// x/scale. Throws on non-finite input.
QuantizedTensor quantize(const Tensor4& x);

// decode(code) * scale elementwise.
Tensor4 dequantize(const QuantizedTensor& q);

}  // namespace uspsim

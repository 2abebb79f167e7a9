// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uspsim {

// Raised when tensor shapes disagree; the message names the offending axis.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape4 {
  std::int64_t b = 0;  // batch
  std::int64_t h = 0;  // heads
  std::int64_t s = 0;  // sequence
  std::int64_t d = 0;  // head dim
  std::int64_t count() const { return b * h * s * d; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 array [B,H,S,D], row-major with d fastest.
template <typename T>
struct Tensor4T {
  Shape4 shape{};
  std::vector<T> data;

  Tensor4T() = default;
  explicit Tensor4T(Shape4 sh) : shape(sh), data(static_cast<std::size_t>(sh.count()), T(0)) {}
  Tensor4T(Shape4 sh, std::vector<T> values);

  std::int64_t index(std::int64_t b, std::int64_t h, std::int64_t s, std::int64_t d) const {
    return ((b * shape.h + h) * shape.s + s) * shape.d + d;
  }
  T& at(std::int64_t b, std::int64_t h, std::int64_t s, std::int64_t d) {
    return data[static_cast<std::size_t>(index(b, h, s, d))];
  }
  const T& at(std::int64_t b, std::int64_t h, std::int64_t s, std::int64_t d) const {
    return data[static_cast<std::size_t>(index(b, h, s, d))];
  }

  bool all_finite() const;

  Tensor4T slice_heads(std::int64_t h0, std::int64_t count) const;
  Tensor4T slice_seq(std::int64_t s0, std::int64_t count) const;

  template <typename U>
  Tensor4T<U> cast() const {
    Tensor4T<U> r;
    r.shape = shape;
    r.data.reserve(data.size());
    for (const T& x : data) r.data.push_back(static_cast<U>(x));
    return r;
  }
};

using Tensor4 = Tensor4T<float>;
using Tensor4d = Tensor4T<double>;
using CodeTensor = Tensor4T<std::uint8_t>;  // FP8 code payloads share the layout

template <typename T>
Tensor4T<T> concat_seq(const std::vector<Tensor4T<T>>& parts);
template <typename T>
Tensor4T<T> concat_heads(const std::vector<Tensor4T<T>>& parts);

// Attention output plus per-query log-sum-exp state.
// lse[b,h,s] = log sum_j exp(q.k_j / sqrt(D)), natural log, scaling folded
// into the logits. lse = -inf encodes "no keys seen" (merge identity).
template <typename T>
struct AttnResultT {
  Tensor4T<T> out;     // [B,H,Sq,D]
  std::vector<T> lse;  // length B*H*Sq, row order matching out

  static AttnResultT identity(Shape4 out_shape);
};
using AttnResult = AttnResultT<float>;
using AttnResultd = AttnResultT<double>;

// softmax(Q K^T / sqrt(D)) V over the full (non-causal) key set.
template <typename T>
Tensor4T<T> attention_reference(const Tensor4T<T>& q, const Tensor4T<T>& k, const Tensor4T<T>& v);

// Attention against a key/value chunk, returning the LSE state needed to
// merge chunk results.
template <typename T>
AttnResultT<T> attention_with_lse(const Tensor4T<T>& q, const Tensor4T<T>& k, const Tensor4T<T>& v);

// Online-softmax combination of two chunk results:
//   m = max(lse1, lse2); lse = m + log(e^{lse1-m} + e^{lse2-m})
//   O = e^{lse1-lse} O1 + e^{lse2-lse} O2
template <typename T>
AttnResultT<T> merge_lse(const AttnResultT<T>& a, const AttnResultT<T>& b);

template <typename T>
T max_abs_diff(const Tensor4T<T>& a, const Tensor4T<T>& b);

}  // namespace uspsim

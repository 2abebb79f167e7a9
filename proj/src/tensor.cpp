// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#include "uspsim/tensor.hpp"

#include <cmath>
#include <limits>
#include <type_traits>

namespace uspsim {

std::string Shape4::str() const {
  return "[" + std::to_string(b) + "," + std::to_string(h) + "," + std::to_string(s) + "," +
         std::to_string(d) + "]";
}

template <typename T>
Tensor4T<T>::Tensor4T(Shape4 sh, std::vector<T> values) : shape(sh), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != sh.count()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + sh.str());
  }
}

template <typename T>
bool Tensor4T<T>::all_finite() const {
  if constexpr (std::is_floating_point_v<T>) {
    for (const T& x : data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

template <typename T>
Tensor4T<T> Tensor4T<T>::slice_heads(std::int64_t h0, std::int64_t count) const {
  if (h0 < 0 || count < 0 || h0 + count > shape.h) {
    throw ShapeError("head slice [" + std::to_string(h0) + "," + std::to_string(h0 + count) +
                     ") out of range for H=" + std::to_string(shape.h));
  }
  Tensor4T r(Shape4{shape.b, count, shape.s, shape.d});
  for (std::int64_t b = 0; b < shape.b; ++b)
    for (std::int64_t h = 0; h < count; ++h)
      for (std::int64_t s = 0; s < shape.s; ++s)
        for (std::int64_t d = 0; d < shape.d; ++d) r.at(b, h, s, d) = at(b, h0 + h, s, d);
  return r;
}

template <typename T>
Tensor4T<T> Tensor4T<T>::slice_seq(std::int64_t s0, std::int64_t count) const {
  if (s0 < 0 || count < 0 || s0 + count > shape.s) {
    throw ShapeError("sequence slice [" + std::to_string(s0) + "," + std::to_string(s0 + count) +
                     ") out of range for S=" + std::to_string(shape.s));
  }
  Tensor4T r(Shape4{shape.b, shape.h, count, shape.d});
  for (std::int64_t b = 0; b < shape.b; ++b)
    for (std::int64_t h = 0; h < shape.h; ++h)
      for (std::int64_t s = 0; s < count; ++s)
        for (std::int64_t d = 0; d < shape.d; ++d) r.at(b, h, s, d) = at(b, h, s0 + s, d);
  return r;
}

template <typename T>
Tensor4T<T> concat_seq(const std::vector<Tensor4T<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_seq: no parts");
  Shape4 base = parts.front().shape;
  std::int64_t total_s = 0;
  for (const auto& p : parts) {
    if (p.shape.b != base.b || p.shape.h != base.h || p.shape.d != base.d) {
      throw ShapeError("concat_seq: part shape " + p.shape.str() + " differs from " + base.str() +
                       " on a non-sequence axis");
    }
    total_s += p.shape.s;
  }
  Tensor4T<T> r(Shape4{base.b, base.h, total_s, base.d});
  std::int64_t s_off = 0;
  for (const auto& p : parts) {
    for (std::int64_t b = 0; b < base.b; ++b)
      for (std::int64_t h = 0; h < base.h; ++h)
        for (std::int64_t s = 0; s < p.shape.s; ++s)
          for (std::int64_t d = 0; d < base.d; ++d) r.at(b, h, s_off + s, d) = p.at(b, h, s, d);
    s_off += p.shape.s;
  }
  return r;
}

template <typename T>
Tensor4T<T> concat_heads(const std::vector<Tensor4T<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_heads: no parts");
  Shape4 base = parts.front().shape;
  std::int64_t total_h = 0;
  for (const auto& p : parts) {
    if (p.shape.b != base.b || p.shape.s != base.s || p.shape.d != base.d) {
      throw ShapeError("concat_heads: part shape " + p.shape.str() + " differs from " +
                       base.str() + " on a non-head axis");
    }
    total_h += p.shape.h;
  }
  Tensor4T<T> r(Shape4{base.b, total_h, base.s, base.d});
  std::int64_t h_off = 0;
  for (const auto& p : parts) {
    for (std::int64_t b = 0; b < base.b; ++b)
      for (std::int64_t h = 0; h < p.shape.h; ++h)
        for (std::int64_t s = 0; s < base.s; ++s)
          for (std::int64_t d = 0; d < base.d; ++d) r.at(b, h_off + h, s, d) = p.at(b, h, s, d);
    h_off += p.shape.h;
  }
  return r;
}

template <typename T>
AttnResultT<T> AttnResultT<T>::identity(Shape4 out_shape) {
  AttnResultT r;
  r.out = Tensor4T<T>(out_shape);
  r.lse.assign(static_cast<std::size_t>(out_shape.b * out_shape.h * out_shape.s),
               -std::numeric_limits<T>::infinity());
  return r;
}

namespace {

template <typename T>
void check_qkv(const Tensor4T<T>& q, const Tensor4T<T>& k, const Tensor4T<T>& v) {
  if (q.shape.b != k.shape.b || q.shape.b != v.shape.b) {
    throw ShapeError("attention: batch axis mismatch, Q B=" + std::to_string(q.shape.b) +
                     " K B=" + std::to_string(k.shape.b) + " V B=" + std::to_string(v.shape.b));
  }
  if (q.shape.h != k.shape.h || q.shape.h != v.shape.h) {
    throw ShapeError("attention: head axis mismatch, Q H=" + std::to_string(q.shape.h) +
                     " K H=" + std::to_string(k.shape.h) + " V H=" + std::to_string(v.shape.h));
  }
  if (q.shape.d != k.shape.d || q.shape.d != v.shape.d) {
    throw ShapeError("attention: head-dim axis mismatch, Q D=" + std::to_string(q.shape.d) +
                     " K D=" + std::to_string(k.shape.d) + " V D=" + std::to_string(v.shape.d));
  }
  if (k.shape.s != v.shape.s) {
    throw ShapeError("attention: sequence axis mismatch between K S=" +
                     std::to_string(k.shape.s) + " and V S=" + std::to_string(v.shape.s));
  }
}

// One pass per query row: stable row softmax (subtract the row max), then the
// weighted value sum. Emits lse when a destination is supplied.
template <typename T>
void attention_core(const Tensor4T<T>& q, const Tensor4T<T>& k, const Tensor4T<T>& v,
                    Tensor4T<T>& out, std::vector<T>* lse) {
  const std::int64_t skv = k.shape.s;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.shape.d));
  std::vector<T> logits(static_cast<std::size_t>(skv));
  for (std::int64_t b = 0; b < q.shape.b; ++b) {
    for (std::int64_t h = 0; h < q.shape.h; ++h) {
      for (std::int64_t sq = 0; sq < q.shape.s; ++sq) {
        T row_max = -std::numeric_limits<T>::infinity();
        for (std::int64_t sk = 0; sk < skv; ++sk) {
          T dot = 0;
          for (std::int64_t d = 0; d < q.shape.d; ++d) dot += q.at(b, h, sq, d) * k.at(b, h, sk, d);
          T z = dot * inv_sqrt_d;
          logits[static_cast<std::size_t>(sk)] = z;
          if (z > row_max) row_max = z;
        }
        const std::int64_t row = (b * q.shape.h + h) * q.shape.s + sq;
        if (skv == 0) {
          if (lse) (*lse)[static_cast<std::size_t>(row)] = -std::numeric_limits<T>::infinity();
          continue;  // out row stays zero: merge identity
        }
        T denom = 0;
        for (std::int64_t sk = 0; sk < skv; ++sk) {
          T w = std::exp(logits[static_cast<std::size_t>(sk)] - row_max);
          logits[static_cast<std::size_t>(sk)] = w;
          denom += w;
        }
        for (std::int64_t d = 0; d < q.shape.d; ++d) {
          T acc = 0;
          for (std::int64_t sk = 0; sk < skv; ++sk)
            acc += logits[static_cast<std::size_t>(sk)] * v.at(b, h, sk, d);
          out.at(b, h, sq, d) = acc / denom;
        }
        if (lse) (*lse)[static_cast<std::size_t>(row)] = row_max + std::log(denom);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor4T<T> attention_reference(const Tensor4T<T>& q, const Tensor4T<T>& k, const Tensor4T<T>& v) {
  check_qkv(q, k, v);
  Tensor4T<T> out(q.shape);
  attention_core(q, k, v, out, nullptr);
  return out;
}

template <typename T>
AttnResultT<T> attention_with_lse(const Tensor4T<T>& q, const Tensor4T<T>& k,
                                  const Tensor4T<T>& v) {
  check_qkv(q, k, v);
  AttnResultT<T> r;
  r.out = Tensor4T<T>(q.shape);
  r.lse.assign(static_cast<std::size_t>(q.shape.b * q.shape.h * q.shape.s), T(0));
  attention_core(q, k, v, r.out, &r.lse);
  return r;
}

template <typename T>
AttnResultT<T> merge_lse(const AttnResultT<T>& a, const AttnResultT<T>& b) {
  if (!(a.out.shape == b.out.shape)) {
    throw ShapeError("merge_lse: output shapes differ, " + a.out.shape.str() + " vs " +
                     b.out.shape.str());
  }
  if (a.lse.size() != b.lse.size()) {
    throw ShapeError("merge_lse: lse lengths differ, " + std::to_string(a.lse.size()) + " vs " +
                     std::to_string(b.lse.size()));
  }
  const std::int64_t dd = a.out.shape.d;
  AttnResultT<T> r;
  r.out = Tensor4T<T>(a.out.shape);
  r.lse.resize(a.lse.size());
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t row = 0; row < a.lse.size(); ++row) {
    const T l1 = a.lse[row];
    const T l2 = b.lse[row];
    const std::int64_t off = static_cast<std::int64_t>(row) * dd;
    // Identity operand: copy the other side through untouched.
    if (l2 == neg_inf) {
      r.lse[row] = l1;
      for (std::int64_t d = 0; d < dd; ++d) r.out.data[off + d] = a.out.data[off + d];
      continue;
    }
    if (l1 == neg_inf) {
      r.lse[row] = l2;
      for (std::int64_t d = 0; d < dd; ++d) r.out.data[off + d] = b.out.data[off + d];
      continue;
    }
    const T m = l1 > l2 ? l1 : l2;
    const T lse_new = m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
    const T c1 = std::exp(l1 - lse_new);
    const T c2 = std::exp(l2 - lse_new);
    r.lse[row] = lse_new;
    for (std::int64_t d = 0; d < dd; ++d)
      r.out.data[off + d] = c1 * a.out.data[off + d] + c2 * b.out.data[off + d];
  }
  return r;
}

template <typename T>
T max_abs_diff(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  if (!(a.shape == b.shape)) {
    throw ShapeError("max_abs_diff: shapes differ, " + a.shape.str() + " vs " + b.shape.str());
  }
  T worst = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    T d = std::abs(a.data[i] - b.data[i]);
    if (d > worst) worst = d;
  }
  return worst;
}

template struct Tensor4T<float>;
template struct Tensor4T<double>;
template struct Tensor4T<std::uint8_t>;
template struct AttnResultT<float>;
template struct AttnResultT<double>;

template Tensor4T<float> concat_seq(const std::vector<Tensor4T<float>>&);
template Tensor4T<double> concat_seq(const std::vector<Tensor4T<double>>&);
template Tensor4T<std::uint8_t> concat_seq(const std::vector<Tensor4T<std::uint8_t>>&);
template Tensor4T<float> concat_heads(const std::vector<Tensor4T<float>>&);
template Tensor4T<double> concat_heads(const std::vector<Tensor4T<double>>&);
template Tensor4T<std::uint8_t> concat_heads(const std::vector<Tensor4T<std::uint8_t>>&);

template Tensor4T<float> attention_reference(const Tensor4T<float>&, const Tensor4T<float>&,
                                             const Tensor4T<float>&);
template Tensor4T<double> attention_reference(const Tensor4T<double>&, const Tensor4T<double>&,
                                              const Tensor4T<double>&);
template AttnResultT<float> attention_with_lse(const Tensor4T<float>&, const Tensor4T<float>&,
                                               const Tensor4T<float>&);
template AttnResultT<double> attention_with_lse(const Tensor4T<double>&, const Tensor4T<double>&,
                                                const Tensor4T<double>&);
template AttnResultT<float> merge_lse(const AttnResultT<float>&, const AttnResultT<float>&);
template AttnResultT<double> merge_lse(const AttnResultT<double>&, const AttnResultT<double>&);
template float max_abs_diff(const Tensor4T<float>&, const Tensor4T<float>&);
template double max_abs_diff(const Tensor4T<double>&, const Tensor4T<double>&);

}  // namespace uspsim

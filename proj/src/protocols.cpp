// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#include "uspsim/protocols.hpp"

#include <algorithm>
#include <utility>

namespace uspsim {

std::vector<Tensor4> split_sequence(const Tensor4& full, int count) {
  if (count < 1) throw ShapeError("split_sequence: count must be >= 1");
  if (full.shape.s % count != 0) {
    throw ShapeError("split_sequence: S=" + std::to_string(full.shape.s) +
                     " not divisible by shard count " + std::to_string(count));
  }
  const std::int64_t chunk = full.shape.s / count;
  std::vector<Tensor4> shards;
  shards.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) shards.push_back(full.slice_seq(i * chunk, chunk));
  return shards;
}

Tensor4 gather_output(const std::vector<Tensor4>& seq_shards) { return concat_seq(seq_shards); }

Tensor4 gather_shards(const std::vector<std::pair<ShardSpec, Tensor4>>& shards) {
  if (shards.empty()) throw ShapeError("gather_shards: no shards");
  const int count = shards.front().first.count;
  std::vector<const Tensor4*> ordered(static_cast<std::size_t>(count), nullptr);
  for (const auto& [spec, t] : shards) {
    if (spec.axis != ShardSpec::Axis::kSequence)
      throw ShapeError("gather_shards: only sequence-axis shards are gathered");
    if (spec.count != count)
      throw ShapeError("gather_shards: inconsistent shard counts " + std::to_string(spec.count) +
                       " vs " + std::to_string(count));
    if (spec.index < 0 || spec.index >= count)
      throw ShapeError("gather_shards: shard index " + std::to_string(spec.index) +
                       " outside [0," + std::to_string(count) + ")");
    auto& slot = ordered[static_cast<std::size_t>(spec.index)];
    if (slot != nullptr)
      throw ShapeError("gather_shards: shard index " + std::to_string(spec.index) +
                       " covered twice");
    slot = &t;
  }
  std::vector<Tensor4> parts;
  parts.reserve(ordered.size());
  for (int i = 0; i < count; ++i) {
    if (!ordered[static_cast<std::size_t>(i)])
      throw ShapeError("gather_shards: gap in coverage at shard index " + std::to_string(i));
    parts.push_back(*ordered[static_cast<std::size_t>(i)]);
  }
  return concat_seq(parts);
}

namespace detail {

Bytes tensor_payload(const Tensor4& t) {
  Bytes out;
  out.reserve(t.data.size() * 4);
  for (float x : t.data) put_f32_le(out, x);
  return out;
}

Tensor4 tensor_from_payload(const Bytes& buf, const Shape4& expected, const char* what) {
  const std::size_t want = static_cast<std::size_t>(expected.count()) * 4;
  if (buf.size() != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) + " bytes for " +
                     expected.str() + " f32 payload, got " + std::to_string(buf.size()));
  }
  Tensor4 t(expected);
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = get_f32_le(buf.data() + i * 4);
  return t;
}

Bytes quantized_payload(const QuantizedTensor& q) {
  Bytes out;
  out.reserve(4 + q.codes.data.size());
  put_f32_le(out, q.scale);
  out.insert(out.end(), q.codes.data.begin(), q.codes.data.end());
  return out;
}

Tensor4 dequantized_from_payload(const Bytes& buf, const Shape4& expected, const char* what) {
  const std::size_t want = 4 + static_cast<std::size_t>(expected.count());
  if (buf.size() != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) + " bytes for " +
                     expected.str() + " fp8 payload, got " + std::to_string(buf.size()));
  }
  QuantizedTensor q;
  q.scale = get_f32_le(buf.data());
  q.codes = CodeTensor(expected);
  std::copy(buf.begin() + 4, buf.end(), q.codes.data.begin());
  return dequantize(q);
}

namespace {

void check_local_qkv(const Tensor4& q, const Tensor4& k, const Tensor4& v, const char* where) {
  if (!(q.shape == k.shape) || !(q.shape == v.shape)) {
    throw ShapeError(std::string(where) + ": local Q/K/V shapes differ: Q=" + q.shape.str() +
                     " K=" + k.shape.str() + " V=" + v.shape.str());
  }
  if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
    throw std::invalid_argument(std::string(where) + ": non-finite element in protocol input");
  }
}

// K/V chunk as it travels between ring positions, with the matching payload
// codecs for both precision modes.
struct KvChunk {
  Tensor4 k, v;
};

Bytes kv_part_payload(const Tensor4& t, bool fp8) {
  return fp8 ? quantized_payload(quantize(t)) : tensor_payload(t);
}

Tensor4 kv_part_from_payload(const Bytes& buf, const Shape4& expected, bool fp8,
                             const char* what) {
  return fp8 ? dequantized_from_payload(buf, expected, what)
             : tensor_from_payload(buf, expected, what);
}

}  // namespace

Resharded ulysses_input_reshard(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                const Tensor4& v, const ProcessGroup& group,
                                const CommOptions& opts) {
  check_local_qkv(q, k, v, "ulysses");
  const int u = group.size();
  if (q.shape.h % u != 0) {
    throw ShapeError("ulysses: head count H=" + std::to_string(q.shape.h) +
                     " not divisible by ulysses dimension U=" + std::to_string(u));
  }
  const std::int64_t heads_per = q.shape.h / u;

  // One packed payload per destination: that destination's head block of Q,
  // K, and V, K/V quantized when requested.
  QuantizedTensor qk, qv;
  if (opts.fp8_kv) {
    qk = quantize(k);
    qv = quantize(v);
  }
  std::vector<Bytes> to_each(static_cast<std::size_t>(u));
  for (int t = 0; t < u; ++t) {
    Bytes buf = tensor_payload(q.slice_heads(t * heads_per, heads_per));
    Bytes kp = opts.fp8_kv ? quantized_payload(qk.slice_heads(t * heads_per, heads_per))
                           : tensor_payload(k.slice_heads(t * heads_per, heads_per));
    Bytes vp = opts.fp8_kv ? quantized_payload(qv.slice_heads(t * heads_per, heads_per))
                           : tensor_payload(v.slice_heads(t * heads_per, heads_per));
    buf.insert(buf.end(), kp.begin(), kp.end());
    buf.insert(buf.end(), vp.begin(), vp.end());
    to_each[static_cast<std::size_t>(t)] = std::move(buf);
  }

  std::vector<Bytes> got = ctx.all_to_all(group, std::move(to_each));

  // Source j contributed our head block over its sequence shard; sequence
  // order follows group position.
  const Shape4 piece{q.shape.b, heads_per, q.shape.s, q.shape.d};
  const std::size_t q_bytes = static_cast<std::size_t>(piece.count()) * 4;
  const std::size_t kv_bytes = opts.fp8_kv ? 4 + static_cast<std::size_t>(piece.count()) : q_bytes;
  std::vector<Tensor4> q_parts, k_parts, v_parts;
  for (int j = 0; j < u; ++j) {
    const Bytes& buf = got[static_cast<std::size_t>(j)];
    if (buf.size() != q_bytes + 2 * kv_bytes) {
      throw ShapeError("ulysses: inconsistent shard shapes across ranks: payload from position " +
                       std::to_string(j) + " has " + std::to_string(buf.size()) +
                       " bytes, expected " + std::to_string(q_bytes + 2 * kv_bytes));
    }
    Bytes qb(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(q_bytes));
    Bytes kb(buf.begin() + static_cast<std::ptrdiff_t>(q_bytes),
             buf.begin() + static_cast<std::ptrdiff_t>(q_bytes + kv_bytes));
    Bytes vb(buf.begin() + static_cast<std::ptrdiff_t>(q_bytes + kv_bytes), buf.end());
    q_parts.push_back(tensor_from_payload(qb, piece, "ulysses q block"));
    k_parts.push_back(kv_part_from_payload(kb, piece, opts.fp8_kv, "ulysses k block"));
    v_parts.push_back(kv_part_from_payload(vb, piece, opts.fp8_kv, "ulysses v block"));
  }
  (void)pos;
  return Resharded{concat_seq(q_parts), concat_seq(k_parts), concat_seq(v_parts)};
}

Tensor4 ulysses_output_reshard(WorkerContext& ctx, const Tensor4& out,
                               const ProcessGroup& group) {
  const int u = group.size();
  if (out.shape.s % u != 0) {
    throw ShapeError("ulysses: gathered sequence length S=" + std::to_string(out.shape.s) +
                     " not divisible by ulysses dimension U=" + std::to_string(u));
  }
  const std::int64_t seq_per = out.shape.s / u;
  std::vector<Bytes> to_each(static_cast<std::size_t>(u));
  for (int t = 0; t < u; ++t)
    to_each[static_cast<std::size_t>(t)] = tensor_payload(out.slice_seq(t * seq_per, seq_per));

  std::vector<Bytes> got = ctx.all_to_all(group, std::move(to_each));

  const Shape4 piece{out.shape.b, out.shape.h, seq_per, out.shape.d};
  std::vector<Tensor4> parts;
  for (int j = 0; j < u; ++j)
    parts.push_back(
        tensor_from_payload(got[static_cast<std::size_t>(j)], piece, "ulysses o block"));
  (void)ctx;
  return concat_heads(parts);
}

}  // namespace detail

Tensor4 ulysses_attention(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                          const Tensor4& v, const ProcessGroup& group, const CommOptions& opts) {
  detail::Resharded rs = detail::ulysses_input_reshard(ctx, q, k, v, group, opts);
  ctx.mark(EventKind::kComputeBegin, "attn", 0);
  AttnResult local = attention_with_lse(rs.q, rs.k, rs.v);
  ctx.mark(EventKind::kComputeEnd, "attn", 0);
  return detail::ulysses_output_reshard(ctx, local.out, group);
}

namespace {

using detail::kv_part_from_payload;
using detail::kv_part_payload;

struct RingEndpoints {
  int next;
  int prev;
};

RingEndpoints ring_endpoints(const ProcessGroup& group, int rank) {
  const int r = group.size();
  const int pos = group.position_of(rank);
  if (pos < 0)
    throw FabricError("rank " + std::to_string(rank) + " not in ring group " + group.key());
  return {group.members[static_cast<std::size_t>((pos + 1) % r)],
          group.members[static_cast<std::size_t>((pos - 1 + r) % r)]};
}

}  // namespace

AttnResult ring_attention_serial(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                 const Tensor4& v, const ProcessGroup& group,
                                 const CommOptions& opts) {
  detail::check_local_qkv(q, k, v, "ring");
  const int r = group.size();

  ctx.mark(EventKind::kComputeBegin, "attn", 0);
  AttnResult acc = attention_with_lse(q, k, v);
  ctx.mark(EventKind::kComputeEnd, "attn", 0);
  if (r == 1) return acc;

  const RingEndpoints ep = ring_endpoints(group, ctx.rank());
  Tensor4 cur_k = k;
  Tensor4 cur_v = v;
  for (int round = 1; round < r; ++round) {
    ctx.mark(EventKind::kSendIssue, "kv", round);
    ctx.send(ep.next, kv_part_payload(cur_k, opts.fp8_kv), round);
    ctx.send(ep.next, kv_part_payload(cur_v, opts.fp8_kv), round);
    ctx.mark(EventKind::kRecvIssue, "kv", round);
    Bytes kb = ctx.recv(ep.prev);
    Bytes vb = ctx.recv(ep.prev);
    ctx.mark(EventKind::kTransferComplete, "kv", round);
    cur_k = kv_part_from_payload(kb, k.shape, opts.fp8_kv, "ring k chunk");
    cur_v = kv_part_from_payload(vb, v.shape, opts.fp8_kv, "ring v chunk");
    ctx.mark(EventKind::kComputeBegin, "attn", round);
    AttnResult part = attention_with_lse(q, cur_k, cur_v);
    ctx.mark(EventKind::kComputeEnd, "attn", round);
    acc = merge_lse(acc, part);
    ctx.mark(EventKind::kMerge, "lse", round);
  }
  return acc;
}

AttnResult ring_attention_pipelined(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                    const Tensor4& v, const ProcessGroup& group,
                                    const CommOptions& opts) {
  detail::check_local_qkv(q, k, v, "ring");
  const int r = group.size();
  if (r == 1) {
    ctx.mark(EventKind::kComputeBegin, "attn", 0);
    AttnResult acc = attention_with_lse(q, k, v);
    ctx.mark(EventKind::kComputeEnd, "attn", 0);
    return acc;
  }

  const RingEndpoints ep = ring_endpoints(group, ctx.rank());

  // Prefetch the first remote chunk and push the local chunk onward before
  // any attention runs, so round 1's transfer overlaps the local compute.
  ctx.mark(EventKind::kRecvIssue, "kv", 1);
  PendingRecv pending_k = ctx.recv_async(ep.prev);
  PendingRecv pending_v = ctx.recv_async(ep.prev);
  ctx.mark(EventKind::kSendIssue, "kv", 1);
  ctx.send(ep.next, kv_part_payload(k, opts.fp8_kv), 1);
  ctx.send(ep.next, kv_part_payload(v, opts.fp8_kv), 1);

  ctx.mark(EventKind::kComputeBegin, "attn", 0);
  AttnResult acc = attention_with_lse(q, k, v);
  ctx.mark(EventKind::kComputeEnd, "attn", 0);

  for (int round = 1; round < r; ++round) {
    Bytes kb = ctx.wait(pending_k);
    Bytes vb = ctx.wait(pending_v);
    ctx.mark(EventKind::kTransferComplete, "kv", round);
    Tensor4 got_k = kv_part_from_payload(kb, k.shape, opts.fp8_kv, "ring k chunk");
    Tensor4 got_v = kv_part_from_payload(vb, v.shape, opts.fp8_kv, "ring v chunk");
    if (round < r - 1) {
      // Issue the next round's transfer, forwarding the chunk just received.
      ctx.mark(EventKind::kRecvIssue, "kv", round + 1);
      pending_k = ctx.recv_async(ep.prev);
      pending_v = ctx.recv_async(ep.prev);
      ctx.mark(EventKind::kSendIssue, "kv", round + 1);
      ctx.send(ep.next, kv_part_payload(got_k, opts.fp8_kv), round + 1);
      ctx.send(ep.next, kv_part_payload(got_v, opts.fp8_kv), round + 1);
    }
    ctx.mark(EventKind::kComputeBegin, "attn", round);
    AttnResult part = attention_with_lse(q, got_k, got_v);
    ctx.mark(EventKind::kComputeEnd, "attn", round);
    acc = merge_lse(acc, part);
    ctx.mark(EventKind::kMerge, "lse", round);
  }
  return acc;
}

Tensor4 usp_attention(WorkerContext& ctx, const Tensor4& q, const Tensor4& k, const Tensor4& v,
                      const Mesh2D& mesh, const CommOptions& opts) {
  if (mesh.n != ctx.world_size()) {
    throw MeshError("mesh covers " + std::to_string(mesh.n) + " workers but the fabric has " +
                    std::to_string(ctx.world_size()));
  }
  detail::check_local_qkv(q, k, v, "usp");
  if (q.shape.h % mesh.u != 0) {
    throw ShapeError("usp: head count H=" + std::to_string(q.shape.h) +
                     " not divisible by ulysses dimension U=" + std::to_string(mesh.u));
  }
  const ProcessGroup& ug = mesh.ulysses_group(ctx.rank());
  const ProcessGroup& rg = mesh.ring_group(ctx.rank());

  detail::Resharded rs = detail::ulysses_input_reshard(ctx, q, k, v, ug, opts);
  AttnResult reduced = opts.pipelined_ring
                           ? ring_attention_pipelined(ctx, rs.q, rs.k, rs.v, rg, opts)
                           : ring_attention_serial(ctx, rs.q, rs.k, rs.v, rg, opts);
  return detail::ulysses_output_reshard(ctx, reduced.out, ug);
}

}  // namespace uspsim

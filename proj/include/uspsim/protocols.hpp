// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "uspsim/fabric.hpp"
#include "uspsim/fp8.hpp"
#include "uspsim/mesh.hpp"
#include "uspsim/tensor.hpp"

namespace uspsim {

struct CommOptions {
  bool fp8_kv = false;         // quantize K/V payloads (scale + E4M3 codes)
  bool pipelined_ring = false;  // double-buffered ring schedule
};

// Which slice of a sharded axis a tensor holds.
struct ShardSpec {
  enum class Axis { kSequence, kHead };
  Axis axis = Axis::kSequence;
  int index = 0;
  int count = 1;
};

// ---- sharding helpers -------------------------------------------------------

// Equal split along the sequence axis, rank order. S must divide evenly.
std::vector<Tensor4> split_sequence(const Tensor4& full, int count);

// Concatenation along S in rank order (test-side reassembly).
Tensor4 gather_output(const std::vector<Tensor4>& seq_shards);

// Reassembly with explicit coverage checking: every index in [0,count) must
// appear exactly once.
Tensor4 gather_shards(const std::vector<std::pair<ShardSpec, Tensor4>>& shards);

// ---- distributed attention protocols ---------------------------------------
//
// All protocol entry points are collective: every member of the group (or
// every mesh rank, for usp_attention) must call with consistently-shaped
// local shards.

// Head-parallel attention. Local q,k,v are [B,H,S/U,D]; one all-to-all packs
// Q,K,V per destination and reshards to [B,H/U,S,D]; local attention runs on
// the full sequence; a second all-to-all restores [B,H,S/U,D]. With fp8_kv,
// only the K and V payload segments travel quantized.
Tensor4 ulysses_attention(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                          const Tensor4& v, const ProcessGroup& group, const CommOptions& opts);

// Sequence-parallel ring attention, one communication round per remote chunk
// (R-1 rounds total). Sends the current K/V chunk to the next ring position,
// receives from the previous, merges via online softmax. With fp8_kv each
// forwarded chunk is re-quantized from the dequantized values.
AttnResult ring_attention_serial(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                 const Tensor4& v, const ProcessGroup& group,
                                 const CommOptions& opts);

// Double-buffered ring schedule: the first remote chunk's receive (and the
// matching send of the local chunk) is issued before local attention; each
// iteration synchronizes the pending transfer, issues the next pair, then
// computes and merges. Chunk arrival order matches the serial ring, so the
// result is bit-identical to ring_attention_serial.
AttnResult ring_attention_pipelined(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                    const Tensor4& v, const ProcessGroup& group,
                                    const CommOptions& opts);

// USP composition over the 2D mesh: Ulysses all-to-all within the rank's
// ulysses group, ring attention within its ring group, then the restoring
// all-to-all. Local shards are [B,H,S/N,D].
Tensor4 usp_attention(WorkerContext& ctx, const Tensor4& q, const Tensor4& k, const Tensor4& v,
                      const Mesh2D& mesh, const CommOptions& opts);

namespace detail {

// Exposed for shape-level tests of the resharding steps.

struct Resharded {
  Tensor4 q, k, v;  // [B, H/U, S_span, D] where S_span = U * S_local
};

Resharded ulysses_input_reshard(WorkerContext& ctx, const Tensor4& q, const Tensor4& k,
                                const Tensor4& v, const ProcessGroup& group,
                                const CommOptions& opts);

Tensor4 ulysses_output_reshard(WorkerContext& ctx, const Tensor4& out,
                               const ProcessGroup& group);

Bytes tensor_payload(const Tensor4& t);
Tensor4 tensor_from_payload(const Bytes& buf, const Shape4& expected, const char* what);

// Fabric payload for a quantized chunk: 4-byte f32 LE scale, then codes.
Bytes quantized_payload(const QuantizedTensor& q);
Tensor4 dequantized_from_payload(const Bytes& buf, const Shape4& expected, const char* what);

}  // namespace detail

}  // namespace uspsim

// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "uspsim/fabric.hpp"

namespace uspsim {

// No (R,U) factorization satisfies the constraints; the message lists what
// was violated.
class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 2D process mesh of shape (R, U): Ring attention runs across the R
// dimension, Ulysses head parallelism within the U dimension.
//
// Layout is ulysses-fastest: rank = ring_index * U + ulysses_index, so each
// ulysses group is a contiguous rank block and each ring group strides by U.
struct Mesh2D {
  int n = 1;
  int r = 1;
  int u = 1;
  std::vector<ProcessGroup> ring_groups;     // U groups of R ranks
  std::vector<ProcessGroup> ulysses_groups;  // R groups of U ranks

  int ring_index(int rank) const { return rank / u; }
  int ulysses_index(int rank) const { return rank % u; }

  const ProcessGroup& ring_group(int rank) const;
  const ProcessGroup& ulysses_group(int rank) const;

  nlohmann::json to_json() const;
};

// Picks R as the largest divisor of n that is <= max_ring_dim_size and for
// which U = n/R keeps heads divisible (heads % U == 0): the ring dimension is
// capped and the remaining factor goes to the cheaper Ulysses dimension.
Mesh2D build_mesh(int n, int max_ring_dim_size, int heads);

// Mesh with an explicit ring size (r must divide n); used to enumerate every
// feasible factorization in tests and sweeps.
Mesh2D make_mesh(int n, int r);

}  // namespace uspsim

// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#include "uspsim/mesh.hpp"

#include <algorithm>
#include <sstream>

namespace uspsim {

const ProcessGroup& Mesh2D::ring_group(int rank) const {
  if (rank < 0 || rank >= n) throw MeshError("rank " + std::to_string(rank) + " out of range");
  return ring_groups[static_cast<std::size_t>(ulysses_index(rank))];
}

const ProcessGroup& Mesh2D::ulysses_group(int rank) const {
  if (rank < 0 || rank >= n) throw MeshError("rank " + std::to_string(rank) + " out of range");
  return ulysses_groups[static_cast<std::size_t>(ring_index(rank))];
}

nlohmann::json Mesh2D::to_json() const {
  nlohmann::json j;
  j["workers"] = n;
  j["ring_dim"] = r;
  j["ulysses_dim"] = u;
  nlohmann::json rg = nlohmann::json::array();
  for (const auto& g : ring_groups) rg.push_back(g.members);
  nlohmann::json ug = nlohmann::json::array();
  for (const auto& g : ulysses_groups) ug.push_back(g.members);
  j["ring_groups"] = rg;
  j["ulysses_groups"] = ug;
  return j;
}

Mesh2D make_mesh(int n, int r) {
  if (n < 1) throw MeshError("worker count must be >= 1, got " + std::to_string(n));
  if (r < 1 || n % r != 0) {
    throw MeshError("ring dimension " + std::to_string(r) + " does not divide worker count " +
                    std::to_string(n));
  }
  Mesh2D m;
  m.n = n;
  m.r = r;
  m.u = n / r;
  m.ulysses_groups.resize(static_cast<std::size_t>(m.r));
  for (int i = 0; i < m.r; ++i) {
    for (int j = 0; j < m.u; ++j)
      m.ulysses_groups[static_cast<std::size_t>(i)].members.push_back(i * m.u + j);
  }
  m.ring_groups.resize(static_cast<std::size_t>(m.u));
  for (int j = 0; j < m.u; ++j) {
    for (int i = 0; i < m.r; ++i)
      m.ring_groups[static_cast<std::size_t>(j)].members.push_back(i * m.u + j);
  }
  return m;
}

Mesh2D build_mesh(int n, int max_ring_dim_size, int heads) {
  if (n < 1) throw MeshError("worker count must be >= 1, got " + std::to_string(n));
  if (max_ring_dim_size < 1)
    throw MeshError("max_ring_dim_size must be >= 1, got " + std::to_string(max_ring_dim_size));
  if (heads < 1) throw MeshError("head count must be >= 1, got " + std::to_string(heads));

  for (int r = std::min(n, max_ring_dim_size); r >= 1; --r) {
    if (n % r != 0) continue;
    if (heads % (n / r) != 0) continue;
    return make_mesh(n, r);
  }

  std::ostringstream os;
  os << "no feasible (R,U) mesh for N=" << n << ", max_ring_dim_size=" << max_ring_dim_size
     << ", H=" << heads << ":";
  for (int r = 1; r <= n; ++r) {
    if (n % r != 0) continue;
    os << " (R=" << r << ",U=" << n / r << ")";
    if (r > max_ring_dim_size) os << " violates R<=" << max_ring_dim_size << ";";
    else os << " violates H%" << n / r << "==0;";
  }
  throw MeshError(os.str());
}

}  // namespace uspsim

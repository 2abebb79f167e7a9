// Copyright (c) 2026 The uspsim Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "uspsim/tensor.hpp"

namespace uspsim {

// Reproducible random source for fixtures and simulations.
//
// The generator is std::mt19937 (the algorithm is fixed by the C++ standard,
// so streams are identical on every platform). Uniform floats are derived
// from the top 24 bits of each 32-bit draw rather than through
// std::uniform_real_distribution, whose output is implementation-defined:
//
//   u = (next_u32() >> 8) * 2^-24   in [0, 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return engine_(); }

  float uniform(float lo, float hi) {
    float u = static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
    return lo + u * (hi - lo);
  }

  double uniform_double(double lo, double hi) {
    double u = static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0);
    return lo + u * (hi - lo);
  }

  void fill_uniform(Tensor4& t, float lo, float hi) {
    for (float& x : t.data) x = uniform(lo, hi);
  }

 private:
  std::mt19937 engine_;
};

}  // namespace uspsim

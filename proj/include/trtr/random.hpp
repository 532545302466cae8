#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "trtr/tensor.hpp"

namespace trtr {

using Rng = std::mt19937_64;

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Glorot-uniform for a fan_in -> fan_out map.
inline Tensor glorot_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(std::move(shape), -bound, bound, rng);
}

}  // namespace trtr

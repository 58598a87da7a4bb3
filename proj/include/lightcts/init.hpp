#pragma once

#include <cmath>
#include <random>

#include "lightcts/tensor.hpp"

namespace lightcts {

// Uniform in +-sqrt(1 / fan_in), drawn in row-major order.
inline Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace lightcts

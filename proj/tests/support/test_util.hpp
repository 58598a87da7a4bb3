#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lightcts/csv.hpp"
#include "lightcts/ops.hpp"
#include "lightcts/tensor.hpp"

namespace lightcts::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? worst : INFINITY;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
  }
  return true;
}

struct GradCheckResult {
  double worst_relative = 0.0;  // max |analytic - numeric| / max(|analytic|, |numeric|, floor)
  std::size_t checked = 0;
  std::string worst_location;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of sum(f(inputs) * R), R a fixed random
// weighting, against central differences of the same scalar.
inline GradCheckResult check_gradients(const TensorFn& f, std::vector<Tensor> inputs,
                                       std::uint64_t seed, double step = 1e-5,
                                       double floor = 1e-8) {
  std::mt19937_64 rng(seed);
  const Shape out_shape = f(inputs).shape();
  const Tensor weights = random_tensor(out_shape, rng);
  auto objective = [&](const std::vector<Tensor>& xs) {
    return ops::sum(ops::mul(f(xs), weights));
  };

  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = objective(inputs);
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const std::vector<double> analytic = inputs[t].grad();
    auto values = inputs[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = objective(inputs).item();
      values[i] = saved - step;
      const double down = objective(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.worst_relative) {
        result.worst_relative = rel;
        result.worst_location = "input " + std::to_string(t) + " element " +
                                std::to_string(i) + " analytic=" +
                                format_double(analytic[i]) +
                                " numeric=" + format_double(numeric);
      }
    }
  }
  for (auto& x : inputs) x.set_requires_grad(false);
  return result;
}

}  // namespace lightcts::testing

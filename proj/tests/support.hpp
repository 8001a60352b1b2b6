#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "srf/tensor.hpp"

namespace srf::test {

inline Tensor random_normal(std::mt19937_64& rng, Shape shape, double stddev = 1.0, DType dtype = DType::f64) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor::from_values(std::move(shape), v, dtype);
}

inline Tensor random_uniform(std::mt19937_64& rng, Shape shape, double lo, double hi, DType dtype = DType::f64) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor::from_values(std::move(shape), v, dtype);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.to_vector(), b.to_vector()); }

}  // namespace srf::test

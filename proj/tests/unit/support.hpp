#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vgqe/params.hpp"
#include "vgqe/tensor.hpp"

namespace testing {

inline vgqe::Tensor gaussian(vgqe::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  vgqe::Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, sd);
  for (auto& v : t.data()) v = g(rng);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Plain triple loop, [m x n] * [n x p].
inline std::vector<double> dense_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                        std::size_t n, std::size_t p) {
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t l = 0; l < n; ++l) out[i * p + j] += a[i * n + l] * b[l * p + j];
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace testing

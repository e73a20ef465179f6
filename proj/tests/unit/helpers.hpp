#pragma once

#include "mforge/types.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace testing {

using mforge::Matrix;
using mforge::Vector;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  return random_matrix(n, 1, seed, scale).col(0);
}

// Central differences of a scalar function.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double rel = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel * (1.0 + std::abs(x(k)));
    Vector a = x, b = x;
    a(k) += h;
    b(k) -= h;
    g(k) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// |a - b| / max(1, |b|) measured in the infinity norm.
inline double rel_error(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

inline Matrix from_rows(const double* data, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[i * cols + j];
  return m;
}

}  // namespace testing

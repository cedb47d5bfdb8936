#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "iex/diffcore.hpp"

namespace iex::test {

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <class R>
Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, R& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace iex::test

#include "qspike/rng.hpp"

#include <cmath>

namespace qspike {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

Matrix fan_in_uniform(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  return uniform_matrix(out_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
}

}  // namespace qspike

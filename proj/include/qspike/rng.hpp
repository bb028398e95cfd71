#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qspike/matrix.hpp"

namespace qspike {

/// Seeded generator. Draws are derived from raw mt19937_64 bits so the
/// sequence is identical on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  bool coin() { return (engine_() >> 63) != 0; }

  /// Independent child stream, so adding draws in one component does not
  /// shift another component's sequence.
  Rng fork(std::uint64_t tag) { return Rng(engine_() ^ (tag * 0x9E3779B97F4A7C15ULL)); }

 private:
  std::mt19937_64 engine_;
};

/// Fisher-Yates with Rng::index; std::shuffle's draw pattern is
/// implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

/// Uniform entries in [-bound, bound].
Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng);

/// Linear-layer initialization: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
/// for an out x in weight matrix.
Matrix fan_in_uniform(std::size_t out_dim, std::size_t in_dim, Rng& rng);

}  // namespace qspike

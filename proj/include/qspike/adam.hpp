#pragma once

#include <cstdint>

#include "qspike/matrix.hpp"

namespace qspike {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one parameter tensor.
struct AdamState {
  AdamConfig cfg;
  Matrix m;
  Matrix v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const Matrix& like, AdamConfig c)
      : cfg(c), m(like.rows(), like.cols()), v(like.rows(), like.cols()) {}
};

/// One bias-corrected Adam update; returns the new parameters and advances
/// `state`. Moments are lazily shaped on the first call.
Matrix adam_step(const Matrix& params, const Matrix& grads, AdamState& state);

/// In-place variant used by the training loops.
void adam_update(Matrix& params, const Matrix& grads, AdamState& state);

}  // namespace qspike

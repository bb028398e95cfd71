#include "qspike/adam.hpp"

#include <cmath>

namespace qspike {

void adam_update(Matrix& params, const Matrix& grads, AdamState& state) {
  require_same_shape(params, grads, "adam_step");
  if (state.m.empty() && !params.empty()) {
    state.m = Matrix(params.rows(), params.cols());
    state.v = Matrix(params.rows(), params.cols());
  }
  require_same_shape(params, state.m, "adam_step moments");
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");

  state.step += 1;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

Matrix adam_step(const Matrix& params, const Matrix& grads, AdamState& state) {
  Matrix out = params;
  adam_update(out, grads, state);
  return out;
}

}  // namespace qspike

#include "qspike/neuron.hpp"

#include <cmath>

namespace qspike {

void LifConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("LIF gamma must lie in (0, 1]");
  if (!(v_th > 0.0)) throw DomainError("LIF threshold must be positive");
}

std::uint64_t LifLayerState::total_spikes() const {
  std::uint64_t s = 0;
  for (auto c : spike_counts) s += c;
  return s;
}

void lif_step(LifLayerState& state, const Matrix& input_current, const LifConfig& cfg) {
  if (!input_current.same_shape(state.u)) {
    throw ShapeError("lif_step: current " + input_current.shape_str() + " for layer " + state.u.shape_str());
  }
  if (!input_current.all_finite()) throw NumericError("lif_step: non-finite input current");
  const double g = cfg.gamma;
  const double vth = cfg.v_th;
  for (std::size_t i = 0; i < state.u.size(); ++i) {
    const double u_mid = g * state.u[i] + input_current[i];
    const bool fire = u_mid >= vth;
    state.spikes[i] = fire ? 1 : 0;
    state.u[i] = fire ? u_mid - vth : u_mid;
    state.asr_num[i] = g * state.asr_num[i] + (fire ? 1.0 : 0.0);
    state.spike_counts[i] += fire ? 1 : 0;
  }
  state.asr_den = g * state.asr_den + 1.0;
  state.t += 1;
}

Matrix asr(const LifLayerState& state) {
  if (state.t == 0) throw DomainError("asr: undefined before the first timestep");
  Matrix out = state.asr_num;
  out *= 1.0 / state.asr_den;
  return out;
}

double mean_asr(const LifLayerState& state) { return asr(state).mean(); }

}  // namespace qspike

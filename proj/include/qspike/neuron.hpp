#pragma once

#include <cstdint>
#include <vector>

#include "qspike/matrix.hpp"

namespace qspike {

/// Leak factor and firing threshold of a leaky integrate-and-fire layer.
struct LifConfig {
  double gamma = 1.0;
  double v_th = 1.0;

  void validate() const;
};

/// Membrane potentials, last spikes and the leak-weighted spike-rate
/// accumulators for one layer. Neurons are laid out as a rows x cols grid
/// (tokens x features) so layer state lines up with the rate matrices of
/// the steady-state path.
struct LifLayerState {
  Matrix u;                          // membrane potential
  std::vector<std::uint8_t> spikes;  // s[t], 0/1
  Matrix asr_num;                    // sum_tau gamma^(t-tau) s[tau]
  double asr_den = 0.0;              // sum_tau gamma^(t-tau)
  std::uint64_t t = 0;
  std::vector<std::uint64_t> spike_counts;  // total spikes per neuron

  LifLayerState() = default;
  LifLayerState(std::size_t rows, std::size_t cols)
      : u(rows, cols), spikes(rows * cols, 0), asr_num(rows, cols), spike_counts(rows * cols, 0) {}

  std::size_t neurons() const { return u.size(); }
  std::uint64_t total_spikes() const;
};

/// One timestep of
///   u[t+d]   = gamma u[t] + I
///   s[t+1]   = 1 if u[t+d] >= v_th else 0
///   u[t+1]   = u[t+d] - v_th s[t+1]
/// followed by the rate-accumulator update. Throws NumericError on a
/// non-finite input current and ShapeError on a size mismatch.
void lif_step(LifLayerState& state, const Matrix& input_current, const LifConfig& cfg);

/// Leak-weighted average spiking rate asr_num / asr_den, in [0, 1].
/// Throws DomainError before the first step.
Matrix asr(const LifLayerState& state);

/// Mean of asr() over all neurons.
double mean_asr(const LifLayerState& state);

}  // namespace qspike

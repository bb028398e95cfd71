#pragma once

// Temporal LIF simulation of the student. Every neuron layer of the
// steady-state map becomes a population of LIF neurons:
//
//  * projections are driven by synaptic currents W s_in[t] + b computed by
//    accumulating the quantized weights of the spiking inputs;
//  * attention and the normalization layers are driven by a current whose
//    leak-weighted running sum equals D[t] p(running averages), where p is
//    the sublayer's steady-state function and D[t] = sum gamma^i. Their
//    time-averaged drive therefore tracks p at the current rate estimates;
//  * the normalization input sums the spike currents of its branch and of
//    the residual path;
//  * the optional feedback connection delivers the last block's spikes to
//    the input neurons one step later.
//
// For gamma = 1 the rates converge to the steady-state fixed point.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qspike/model.hpp"
#include "qspike/neuron.hpp"

namespace qspike {

/// A synaptic connection whose operations are counted. Each spike of a
/// source neuron costs one accumulate per nonzero synapse it reaches.
struct ConnectionOps {
  std::string name;
  std::size_t source_layer = 0;  // neuron-layer index; see EncoderStack
  std::uint64_t dense_fan_out = 0;  // synapses per source neuron, zeros included
  std::uint64_t executed = 0;       // accumulates performed by the kernel
};

struct InferenceResult {
  Matrix logits;  // 1 x classes
  RateState asr;  // final rates per neuron layer
  std::size_t timesteps = 0;
  std::size_t tokens = 0;
  std::vector<std::vector<std::uint64_t>> spike_counts;  // [layer][neuron]
  std::vector<ConnectionOps> connections;
};

struct SimulationOptions {
  std::size_t timesteps = 500;
  bool parallel_kernels = true;
  /// Called after every step with the state of every neuron layer.
  std::function<void(std::size_t step, const std::vector<LifLayerState>&)> on_step;
};

InferenceResult student_forward_infer(const EncoderStack& stack, const TokenIds& tokens,
                                      const SimulationOptions& opts);

}  // namespace qspike

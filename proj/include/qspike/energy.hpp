#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qspike/simulate.hpp"

namespace qspike {

/// Spike totals per neuron layer pooled over one or more simulated
/// sequences. `neuron_steps` is neurons x timesteps summed over sequences.
struct SpikeStats {
  std::vector<std::string> layer_names;
  std::vector<std::uint64_t> spikes;
  std::vector<std::uint64_t> neurons;
  std::uint64_t timesteps = 0;

  /// Adds one inference run (all runs must share the horizon).
  void add(const EncoderStack& stack, const InferenceResult& run);
};

/// spikes / (neurons x T) per layer.
std::vector<double> compute_ifr(const SpikeStats& stats);

/// Chain form sum_i IFR_i Layer#OPS_{i+1} / sum_i Layer#OPS_i: layer i's
/// spikes drive layer i+1's synapses, the last layer drives nothing.
double norm_ops(const std::vector<double>& ifr, const std::vector<double>& layer_ops);

struct EnergyProfile {
  double float_acc_pj = 0.9;
  double int_acc_pj = 0.1;

  void validate() const;
  double acc_pj(QuantMode mode) const { return mode == QuantMode::FullPrecision ? float_acc_pj : int_acc_pj; }
};

/// Accumulate count implied by spike counts and the nonzero fan-out of
/// every spiking neuron, summed over all connections of one run.
std::uint64_t predicted_acc_ops(const EncoderStack& stack, const InferenceResult& run);

struct ConnectionEnergy {
  std::string name;
  std::string source_layer;
  double source_ifr = 0.0;
  double layer_ops = 0.0;   // dense synapses x timesteps, pooled over runs
  double driven_ops = 0.0;  // IFR x Layer#OPS
  std::uint64_t executed_acc = 0;
};

struct EnergyReport {
  std::string model_kind;
  std::uint64_t timesteps = 0;
  std::size_t sequences = 0;
  std::vector<std::string> layer_names;
  std::vector<double> layer_ifr;
  std::vector<ConnectionEnergy> connections;
  double total_layer_ops = 0.0;
  double total_driven_ops = 0.0;
  double norm_ops = 0.0;
  double acc_energy_pj = 0.0;  // per accumulate for this model kind
  double energy_pj = 0.0;      // driven ops x per-accumulate energy
  std::uint64_t executed_acc = 0;
  std::uint64_t predicted_acc = 0;
  /// float-ACC / int-ACC energy of the profile.
  double ac_energy_ratio = 0.0;
};

EnergyReport energy_estimate(const EncoderStack& stack, const std::vector<InferenceResult>& runs,
                             const EnergyProfile& profile);

nlohmann::ordered_json to_json(const EnergyReport& r);

struct EnergyComparison {
  EnergyReport quantized;
  EnergyReport full_precision;
  std::optional<double> norm_ops_ratio;  // undefined when the reference has no activity
  std::optional<double> energy_ratio;
};

EnergyComparison compare_energy(const EnergyReport& quantized, const EnergyReport& full_precision);
nlohmann::ordered_json to_json(const EnergyComparison& c);

}  // namespace qspike

#include "qspike/energy.hpp"

namespace qspike {

void SpikeStats::add(const EncoderStack& stack, const InferenceResult& run) {
  const std::size_t layers = run.spike_counts.size();
  if (spikes.empty()) {
    for (std::size_t l = 0; l < layers; ++l) layer_names.push_back(stack.layer_name(l));
    spikes.assign(layers, 0);
    neurons.assign(layers, 0);
    timesteps = run.timesteps;
  }
  if (layers != spikes.size()) throw ShapeError("SpikeStats::add: layer count mismatch");
  if (run.timesteps != timesteps) throw ShapeError("SpikeStats::add: runs must share the horizon");
  for (std::size_t l = 0; l < layers; ++l) {
    for (auto c : run.spike_counts[l]) spikes[l] += c;
    neurons[l] += run.spike_counts[l].size();
  }
}

std::vector<double> compute_ifr(const SpikeStats& s) {
  if (s.timesteps == 0) throw DomainError("compute_ifr: timesteps must be at least 1");
  if (s.spikes.size() != s.neurons.size()) throw ConfigError("compute_ifr: mismatched layer lists");
  std::vector<double> out;
  for (std::size_t l = 0; l < s.spikes.size(); ++l) {
    const double cap = static_cast<double>(s.neurons[l]) * static_cast<double>(s.timesteps);
    out.push_back(cap == 0.0 ? 0.0 : static_cast<double>(s.spikes[l]) / cap);
  }
  return out;
}

double norm_ops(const std::vector<double>& ifr, const std::vector<double>& layer_ops) {
  if (ifr.size() != layer_ops.size()) throw ConfigError("norm_ops: mismatched layer lists");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < layer_ops.size(); ++i) {
    den += layer_ops[i];
    if (i + 1 < layer_ops.size()) num += ifr[i] * layer_ops[i + 1];
  }
  return den == 0.0 ? 0.0 : num / den;
}

void EnergyProfile::validate() const {
  if (!(float_acc_pj > 0.0) || !(int_acc_pj > 0.0)) throw ConfigError("energy profile entries must be positive");
}

namespace {

// Weight matrix behind a named connection; null for attention products.
const QuantizedLinear* connection_layer(const EncoderStack& stack, const std::string& name) {
  if (name == "head") return &stack.head;
  if (name == "feedback") return stack.feedback ? &*stack.feedback : nullptr;
  for (std::size_t b = 0; b < stack.layers.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    if (name.rfind(p, 0) != 0) continue;
    const std::string s = name.substr(p.size());
    const auto& l = stack.layers[b];
    if (s == "query") return &l.query;
    if (s == "key") return &l.key;
    if (s == "value") return &l.value;
    if (s == "attn_out") return &l.attn_out;
    if (s == "ff_in") return &l.ff_in;
    if (s == "ff_out") return &l.ff_out;
    return nullptr;
  }
  throw ConfigError("unknown connection '" + name + "'");
}

std::vector<std::uint64_t> nonzero_fan_out(const QuantizedLinear& layer) {
  std::vector<std::uint64_t> fan(layer.in_dim(), 0);
  const bool fp = layer.mode == QuantMode::FullPrecision;
  for (std::size_t k = 0; k < layer.out_dim(); ++k)
    for (std::size_t j = 0; j < layer.in_dim(); ++j) {
      const bool nz = fp ? layer.latent(k, j) != 0.0 : layer.codes()(k, j) != 0;
      fan[j] += nz ? 1 : 0;
    }
  return fan;
}

}  // namespace

std::uint64_t predicted_acc_ops(const EncoderStack& stack, const InferenceResult& run) {
  std::uint64_t total = 0;
  for (const auto& c : run.connections) {
    const auto& counts = run.spike_counts.at(c.source_layer);
    const QuantizedLinear* layer = connection_layer(stack, c.name);
    if (!layer) {
      for (auto n : counts) total += n * c.dense_fan_out;
      continue;
    }
    const std::vector<std::uint64_t> fan = nonzero_fan_out(*layer);
    const std::size_t width = layer->in_dim();
    for (std::size_t i = 0; i < counts.size(); ++i) total += counts[i] * fan[i % width];
  }
  return total;
}

EnergyReport energy_estimate(const EncoderStack& stack, const std::vector<InferenceResult>& runs,
                             const EnergyProfile& profile) {
  profile.validate();
  if (runs.empty()) throw ShapeError("energy_estimate: no inference runs");
  EnergyReport r;
  r.model_kind = to_string(stack.quant_mode());
  r.sequences = runs.size();
  SpikeStats stats;
  for (const auto& run : runs) stats.add(stack, run);
  r.timesteps = stats.timesteps;
  r.layer_names = stats.layer_names;
  r.layer_ifr = compute_ifr(stats);

  const auto& proto = runs.front().connections;
  for (const auto& c : proto) {
    ConnectionEnergy ce;
    ce.name = c.name;
    ce.source_layer = stack.layer_name(c.source_layer);
    r.connections.push_back(ce);
  }
  std::vector<double> src_spikes(proto.size(), 0.0), src_steps(proto.size(), 0.0);
  for (const auto& run : runs) {
    if (run.connections.size() != proto.size()) throw ShapeError("energy_estimate: connection lists differ");
    for (std::size_t i = 0; i < proto.size(); ++i) {
      const auto& c = run.connections[i];
      const auto& counts = run.spike_counts.at(c.source_layer);
      double spikes = 0.0;
      for (auto n : counts) spikes += static_cast<double>(n);
      const double steps = static_cast<double>(counts.size()) * static_cast<double>(run.timesteps);
      const double fan = static_cast<double>(c.dense_fan_out);
      r.connections[i].layer_ops += steps * fan;
      r.connections[i].driven_ops += spikes * fan;
      r.connections[i].executed_acc += c.executed;
      src_spikes[i] += spikes;
      src_steps[i] += steps;
    }
    r.predicted_acc += predicted_acc_ops(stack, run);
  }
  for (std::size_t i = 0; i < proto.size(); ++i) {
    auto& c = r.connections[i];
    c.source_ifr = src_steps[i] == 0.0 ? 0.0 : src_spikes[i] / src_steps[i];
    r.total_layer_ops += c.layer_ops;
    r.total_driven_ops += c.driven_ops;
    r.executed_acc += c.executed_acc;
  }
  r.norm_ops = r.total_layer_ops == 0.0 ? 0.0 : r.total_driven_ops / r.total_layer_ops;
  r.acc_energy_pj = profile.acc_pj(stack.quant_mode());
  r.energy_pj = r.total_driven_ops * r.acc_energy_pj;
  r.ac_energy_ratio = profile.float_acc_pj / profile.int_acc_pj;
  return r;
}

nlohmann::ordered_json to_json(const EnergyReport& r) {
  nlohmann::ordered_json j;
  j["model_kind"] = r.model_kind;
  j["timesteps"] = r.timesteps;
  j["sequences"] = r.sequences;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.layer_names.size(); ++i)
    layers.push_back({{"name", r.layer_names[i]}, {"ifr", r.layer_ifr[i]}});
  j["layers"] = layers;
  nlohmann::ordered_json conns = nlohmann::ordered_json::array();
  for (const auto& c : r.connections) {
    conns.push_back({{"name", c.name},
                     {"source", c.source_layer},
                     {"source_ifr", c.source_ifr},
                     {"layer_ops", c.layer_ops},
                     {"driven_ops", c.driven_ops},
                     {"executed_acc", c.executed_acc}});
  }
  j["connections"] = conns;
  j["total_layer_ops"] = r.total_layer_ops;
  j["total_driven_ops"] = r.total_driven_ops;
  j["norm_ops"] = r.norm_ops;
  j["acc_energy_pj"] = r.acc_energy_pj;
  j["energy_pj"] = r.energy_pj;
  j["executed_acc"] = r.executed_acc;
  j["predicted_acc"] = r.predicted_acc;
  j["ac_energy_ratio"] = r.ac_energy_ratio;
  j["notes"] = {"layer_ops counts dense synapses per step; the classifier head is included",
                "residual and normalization additions are not counted as accumulates",
                "attention score/mix connections cost one accumulate per spike per token"};
  return j;
}

EnergyComparison compare_energy(const EnergyReport& q, const EnergyReport& fp) {
  if (q.layer_names != fp.layer_names || q.connections.size() != fp.connections.size()) {
    throw ConfigError("energy comparison needs identical architectures");
  }
  EnergyComparison c{q, fp, std::nullopt, std::nullopt};
  if (fp.norm_ops > 0.0) c.norm_ops_ratio = q.norm_ops / fp.norm_ops;
  if (fp.energy_pj > 0.0) c.energy_ratio = q.energy_pj / fp.energy_pj;
  return c;
}

nlohmann::ordered_json to_json(const EnergyComparison& c) {
  nlohmann::ordered_json j;
  j["quantized"] = to_json(c.quantized);
  j["full_precision"] = to_json(c.full_precision);
  j["norm_ops_ratio"] = c.norm_ops_ratio ? nlohmann::ordered_json(*c.norm_ops_ratio) : nlohmann::ordered_json();
  j["energy_ratio"] = c.energy_ratio ? nlohmann::ordered_json(*c.energy_ratio) : nlohmann::ordered_json();
  return j;
}

}  // namespace qspike

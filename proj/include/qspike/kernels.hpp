#pragma once

// Inner loops shared by the steady-state and temporal paths. Every kernel
// has a serial reference in `serial` and an OpenMP version in `parallel`
// with the same signature; tests require the two to agree bit for bit and
// bench/ compares their throughput. Parallel versions split work by output
// row only, so each output element is produced by one thread in a fixed
// order and results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qspike::kernels {

/// Synapses grouped by presynaptic neuron: for input j, the entries
/// [offsets[j], offsets[j+1]) list the postsynaptic targets and weights.
/// Zero weights are not stored, so traversing a spike costs exactly one
/// accumulate per nonzero synapse.
template <typename T>
struct SpikeSynapses {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> targets;
  std::vector<T> weights;

  std::size_t nonzeros() const { return targets.size(); }
  std::size_t fan_out(std::size_t j) const { return offsets[j + 1] - offsets[j]; }
};

/// Builds the synapse lists from a dense out x in weight array.
template <typename T>
SpikeSynapses<T> make_synapses(std::size_t out_dim, std::size_t in_dim, const T* weights_out_in) {
  SpikeSynapses<T> s;
  s.in_dim = in_dim;
  s.out_dim = out_dim;
  s.offsets.assign(in_dim + 1, 0);
  for (std::size_t j = 0; j < in_dim; ++j) {
    s.offsets[j] = static_cast<std::uint32_t>(s.targets.size());
    for (std::size_t k = 0; k < out_dim; ++k) {
      const T w = weights_out_in[k * in_dim + j];
      if (w != T{0}) {
        s.targets.push_back(static_cast<std::uint32_t>(k));
        s.weights.push_back(w);
      }
    }
  }
  s.offsets[in_dim] = static_cast<std::uint32_t>(s.targets.size());
  return s;
}

namespace serial {

// C = A B with A m x k, B k x n.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
// C = A B^T with A m x k, B n x k.
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
// C = A^T B with A r x m, B r x n.
void gemm_tn(std::size_t r, std::size_t m, std::size_t n, const double* a, const double* b, double* c);

/// For each of `rows` spike rows (0/1 bytes, width syn.in_dim), adds the
/// synaptic weights of every spiking input into acc (rows x out_dim).
/// Returns the number of accumulate operations performed.
std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<std::int8_t>& syn, std::int32_t* acc);
std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<double>& syn, double* acc);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_tn(std::size_t r, std::size_t m, std::size_t n, const double* a, const double* b, double* c);

std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<std::int8_t>& syn, std::int32_t* acc);
std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<double>& syn, double* acc);

}  // namespace parallel

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace qspike::kernels

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qspike/kernels.hpp"
#include "qspike/matrix.hpp"
#include "qspike/rng.hpp"

namespace qspike {

enum class QuantMode { FullPrecision, Binary1Bit, Ternary158Bit };

std::string to_string(QuantMode mode);
/// Accepts "fp", "1bit", "1.58bit".
QuantMode parse_quant_mode(const std::string& s);

/// Small signed integer weight codes, row-major.
struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> data;

  std::int8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const IntMatrix&, const IntMatrix&) = default;
};

struct BinaryCodes {
  IntMatrix q;       // entries in {-1, +1}
  double alpha = 0;  // mean of w
  double beta = 0;   // mean of |w|, used as output scale when enabled
};

struct TernaryCodes {
  IntMatrix q;      // entries in {-1, 0, +1}
  double beta = 0;  // mean of |w|
};

/// q = Sign(w - alpha), alpha = mean(w), Sign(0) = -1.
BinaryCodes quantize_1bit(const Matrix& w);

/// q = Round(Clip(w / (beta + eps), -1, 1)) with beta = mean(|w|) and
/// rounding half away from zero.
TernaryCodes quantize_158bit(const Matrix& w, double epsilon);

/// 2 bits per weight, four weights per byte, weight k in bits 2*(k%4)..2*(k%4)+1
/// of byte k/4 (little-endian within the byte). 00 = 0, 01 = +1, 11 = -1.
std::vector<std::uint8_t> pack_codes(const IntMatrix& q);
IntMatrix unpack_codes(const std::vector<std::uint8_t>& packed, std::size_t rows, std::size_t cols);

/// Linear layer y = x W^T + b whose weights are quantized on the fly from a
/// latent full-precision matrix (out x in). Training mutates `latent` and
/// calls refresh(); inference uses the codes as they were last refreshed or
/// loaded from a checkpoint.
class QuantizedLinear {
 public:
  QuantizedLinear() = default;
  QuantizedLinear(std::size_t out_dim, std::size_t in_dim, QuantMode mode, Rng& rng, double bias_init = 0.0);
  QuantizedLinear(Matrix latent, Matrix bias, QuantMode mode);

  Matrix latent;  // out x in
  Matrix bias;    // 1 x out
  QuantMode mode = QuantMode::FullPrecision;
  double epsilon = 1e-6;
  /// Whether binary layers scale their output by mean(|W|) like ternary ones.
  bool binary_scale = true;

  std::size_t in_dim() const { return latent.cols(); }
  std::size_t out_dim() const { return latent.rows(); }

  /// Recomputes codes, alpha, beta and the effective weights from `latent`.
  void refresh();
  /// Installs frozen codes and statistics (checkpoint load) without
  /// touching the latent weights.
  void set_frozen(IntMatrix codes, double alpha, double beta);

  const IntMatrix& codes() const { return codes_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  /// Multiplier applied to the integer accumulation.
  double output_scale() const;
  /// Weights actually used in the forward pass: scale * codes, or latent.
  const Matrix& effective_weight() const { return mode == QuantMode::FullPrecision ? latent : effective_; }

  /// Number of nonzero synapses (accumulations per fully spiking input).
  std::size_t nonzero_weights() const;

  /// Spike-driven forward: out (rows x out_dim) = scale * acc + bias where acc
  /// sums the weights of every spiking input. Returns accumulate-op count.
  std::uint64_t forward_spikes(std::size_t rows, const std::uint8_t* spikes, Matrix& out, bool parallel = true) const;

 private:
  void rebuild_synapses();

  IntMatrix codes_;
  double alpha_ = 0.0;
  double beta_ = 0.0;
  Matrix effective_;
  kernels::SpikeSynapses<std::int8_t> int_synapses_;
  kernels::SpikeSynapses<double> real_synapses_;
};

/// Real-valued forward x (rows x in) -> rows x out using the effective weights.
Matrix quantized_forward(const QuantizedLinear& layer, const Matrix& x);

/// Identity straight-through estimator: the gradient with respect to the
/// effective weights is passed unchanged to the latent weights.
Matrix ste_backward(const QuantizedLinear& layer, const Matrix& upstream_grad);

}  // namespace qspike

#include "qspike/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace qspike {

std::string to_string(QuantMode mode) {
  switch (mode) {
    case QuantMode::FullPrecision: return "fp";
    case QuantMode::Binary1Bit: return "1bit";
    case QuantMode::Ternary158Bit: return "1.58bit";
  }
  return "fp";
}

QuantMode parse_quant_mode(const std::string& s) {
  if (s == "fp") return QuantMode::FullPrecision;
  if (s == "1bit") return QuantMode::Binary1Bit;
  if (s == "1.58bit") return QuantMode::Ternary158Bit;
  throw ConfigError("unknown quantization mode '" + s + "' (expected fp, 1bit or 1.58bit)");
}

namespace {

void require_nonempty(const Matrix& w, const char* what) {
  if (w.empty()) throw ShapeError(std::string(what) + ": empty weight matrix");
  if (!w.all_finite()) throw NumericError(std::string(what) + ": non-finite weights");
}

double mean_abs(const Matrix& w) {
  double s = 0.0;
  for (double v : w.values()) s += std::abs(v);
  return s / static_cast<double>(w.size());
}

}  // namespace

BinaryCodes quantize_1bit(const Matrix& w) {
  require_nonempty(w, "quantize_1bit");
  BinaryCodes out;
  out.alpha = w.mean();
  out.beta = mean_abs(w);
  out.q = IntMatrix{w.rows(), w.cols(), std::vector<std::int8_t>(w.size())};
  for (std::size_t i = 0; i < w.size(); ++i) out.q.data[i] = (w[i] - out.alpha) > 0.0 ? 1 : -1;
  return out;
}

TernaryCodes quantize_158bit(const Matrix& w, double epsilon) {
  require_nonempty(w, "quantize_158bit");
  if (!(epsilon > 0.0)) throw DomainError("quantize_158bit: epsilon must be positive");
  TernaryCodes out;
  out.beta = mean_abs(w);
  out.q = IntMatrix{w.rows(), w.cols(), std::vector<std::int8_t>(w.size())};
  const double denom = out.beta + epsilon;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double clipped = std::clamp(w[i] / denom, -1.0, 1.0);
    out.q.data[i] = static_cast<std::int8_t>(std::round(clipped));  // half away from zero
  }
  return out;
}

std::vector<std::uint8_t> pack_codes(const IntMatrix& q) {
  std::vector<std::uint8_t> out((q.data.size() + 3) / 4, 0);
  for (std::size_t k = 0; k < q.data.size(); ++k) {
    std::uint8_t bits = 0;
    switch (q.data[k]) {
      case 0: bits = 0b00; break;
      case 1: bits = 0b01; break;
      case -1: bits = 0b11; break;
      default: throw DomainError("pack_codes: code outside {-1, 0, +1}");
    }
    out[k / 4] |= static_cast<std::uint8_t>(bits << (2 * (k % 4)));
  }
  return out;
}

IntMatrix unpack_codes(const std::vector<std::uint8_t>& packed, std::size_t rows, std::size_t cols) {
  const std::size_t n = rows * cols;
  if (packed.size() != (n + 3) / 4) throw ShapeError("unpack_codes: packed length does not match shape");
  IntMatrix q{rows, cols, std::vector<std::int8_t>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned bits = (packed[k / 4] >> (2 * (k % 4))) & 0b11u;
    switch (bits) {
      case 0b00: q.data[k] = 0; break;
      case 0b01: q.data[k] = 1; break;
      case 0b11: q.data[k] = -1; break;
      default: throw DomainError("unpack_codes: reserved 2-bit pattern");
    }
  }
  return q;
}

QuantizedLinear::QuantizedLinear(std::size_t out_dim, std::size_t in_dim, QuantMode m, Rng& rng, double bias_init)
    : latent(fan_in_uniform(out_dim, in_dim, rng)), bias(1, out_dim, bias_init), mode(m) {
  refresh();
}

QuantizedLinear::QuantizedLinear(Matrix w, Matrix b, QuantMode m) : latent(std::move(w)), bias(std::move(b)), mode(m) {
  if (bias.rows() != 1 || bias.cols() != latent.rows()) {
    throw ShapeError("QuantizedLinear: bias " + bias.shape_str() + " for weights " + latent.shape_str());
  }
  refresh();
}

double QuantizedLinear::output_scale() const {
  switch (mode) {
    case QuantMode::Ternary158Bit: return beta_;
    case QuantMode::Binary1Bit: return binary_scale ? beta_ : 1.0;
    case QuantMode::FullPrecision: return 1.0;
  }
  return 1.0;
}

void QuantizedLinear::refresh() {
  switch (mode) {
    case QuantMode::FullPrecision:
      codes_ = {};
      alpha_ = 0.0;
      beta_ = 0.0;
      break;
    case QuantMode::Binary1Bit: {
      auto b = quantize_1bit(latent);
      codes_ = std::move(b.q);
      alpha_ = b.alpha;
      beta_ = b.beta;
      break;
    }
    case QuantMode::Ternary158Bit: {
      auto t = quantize_158bit(latent, epsilon);
      codes_ = std::move(t.q);
      alpha_ = 0.0;
      beta_ = t.beta;
      break;
    }
  }
  rebuild_synapses();
}

void QuantizedLinear::set_frozen(IntMatrix codes, double alpha, double beta) {
  if (mode == QuantMode::FullPrecision) throw ConfigError("set_frozen: full-precision layer has no codes");
  if (codes.rows != latent.rows() || codes.cols != latent.cols()) throw ShapeError("set_frozen: code shape");
  codes_ = std::move(codes);
  alpha_ = alpha;
  beta_ = beta;
  rebuild_synapses();
}

void QuantizedLinear::rebuild_synapses() {
  if (mode == QuantMode::FullPrecision) {
    effective_ = Matrix();
    int_synapses_ = {};
    real_synapses_ = kernels::make_synapses(latent.rows(), latent.cols(), latent.data());
    return;
  }
  const double s = output_scale();
  effective_ = Matrix(latent.rows(), latent.cols());
  for (std::size_t i = 0; i < effective_.size(); ++i) effective_[i] = s * codes_.data[i];
  int_synapses_ = kernels::make_synapses(codes_.rows, codes_.cols, codes_.data.data());
  real_synapses_ = {};
}

std::size_t QuantizedLinear::nonzero_weights() const {
  return mode == QuantMode::FullPrecision ? real_synapses_.nonzeros() : int_synapses_.nonzeros();
}

std::uint64_t QuantizedLinear::forward_spikes(std::size_t rows, const std::uint8_t* spikes, Matrix& out,
                                              bool parallel) const {
  const std::size_t od = out_dim();
  if (out.rows() != rows || out.cols() != od) out = Matrix(rows, od);
  std::uint64_t ops = 0;
  if (mode == QuantMode::FullPrecision) {
    out.fill(0.0);
    ops = parallel ? kernels::parallel::accumulate_spikes(rows, spikes, real_synapses_, out.data())
                   : kernels::serial::accumulate_spikes(rows, spikes, real_synapses_, out.data());
  } else {
    std::vector<std::int32_t> acc(rows * od, 0);
    ops = parallel ? kernels::parallel::accumulate_spikes(rows, spikes, int_synapses_, acc.data())
                   : kernels::serial::accumulate_spikes(rows, spikes, int_synapses_, acc.data());
    const double s = output_scale();
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = s * static_cast<double>(acc[i]);
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < od; ++k) out(r, k) += bias[k];
  return ops;
}

Matrix quantized_forward(const QuantizedLinear& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("quantized_forward: input " + x.shape_str() + " for layer of width " +
                     std::to_string(layer.in_dim()));
  }
  Matrix y = matmul_nt(x, layer.effective_weight());
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t k = 0; k < y.cols(); ++k) y(r, k) += layer.bias[k];
  return y;
}

Matrix ste_backward(const QuantizedLinear& layer, const Matrix& upstream_grad) {
  require_same_shape(layer.latent, upstream_grad, "ste_backward");
  return upstream_grad;
}

}  // namespace qspike

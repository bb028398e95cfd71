#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qspike/autodiff.hpp"
#include "qspike/matrix.hpp"
#include "qspike/neuron.hpp"
#include "qspike/quantizer.hpp"
#include "qspike/rng.hpp"

namespace qspike {

using TokenIds = std::vector<std::size_t>;

/// Rates of every neuron layer of the student, in layer order.
using RateState = std::vector<Matrix>;

struct EncoderLayerConfig {
  std::size_t hidden_dim = 64;
  std::size_t intermediate_dim = 128;
  std::size_t num_heads = 2;
  QuantMode quant_mode = QuantMode::FullPrecision;

  void validate() const;
};

struct StudentConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t num_layers = 2;
  std::size_t num_classes = 2;
  EncoderLayerConfig layer;
  LifConfig lif;
  /// Bound of the initial feedback weights from the last block back to the
  /// input neurons; 0 disables the feedback connection.
  double feedback_scale = 0.0;
  bool binary_scale = true;
  double epsilon = 1e-6;

  void validate() const;
};

/// Sublayer neuron populations inside one spiking encoder block.
enum class Sublayer : std::size_t { Query = 0, Key, Value, Attention, AttentionOut, Intermediate, Output };
inline constexpr std::size_t kSublayersPerBlock = 7;

struct SpikingEncoderLayer {
  QuantizedLinear query, key, value, attn_out, ff_in, ff_out;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x hidden
};

/// One trainable tensor of a model. For quantized linears the forward pass
/// reads `forward_value` (scale * codes) while the optimizer updates `value`
/// (the latent weights) through the identity straight-through estimator.
struct ParamSlot {
  std::string name;
  Matrix* value;
  const Matrix* forward_value;
  QuantizedLinear* owner = nullptr;
};

/// The quantized spiking encoder: input rate-coding neurons, stacked
/// spiking encoder blocks and a full-precision classifier head.
class EncoderStack {
 public:
  StudentConfig cfg;
  Matrix token_embedding;     // vocab x hidden
  Matrix position_embedding;  // max_len x hidden
  std::vector<SpikingEncoderLayer> layers;
  std::optional<QuantizedLinear> feedback;  // hidden x hidden, last block -> input
  QuantizedLinear head;                     // classes x hidden, always full precision

  static EncoderStack random(const StudentConfig& cfg, Rng& rng);

  QuantMode quant_mode() const { return cfg.layer.quant_mode; }
  /// Switches every projection to `mode` and re-quantizes.
  void set_quant_mode(QuantMode mode);
  /// Re-derives codes and scales from the latent weights.
  void refresh_quantization();

  std::vector<QuantizedLinear*> projections();
  std::vector<const QuantizedLinear*> projections() const;
  std::vector<ParamSlot> parameters();

  std::size_t hidden() const { return cfg.layer.hidden_dim; }
  std::size_t num_neuron_layers() const { return 1 + kSublayersPerBlock * layers.size(); }
  static std::size_t layer_index(std::size_t block, Sublayer s) {
    return 1 + kSublayersPerBlock * block + static_cast<std::size_t>(s);
  }
  /// Neuron layer feeding block `block` (input neurons for block 0).
  static std::size_t block_input_index(std::size_t block) {
    return block == 0 ? 0 : layer_index(block - 1, Sublayer::Output);
  }
  std::size_t output_index() const { return layer_index(layers.size() - 1, Sublayer::Output); }
  std::size_t layer_width(std::size_t index) const;
  std::string layer_name(std::size_t index) const;

  /// Zero rates shaped for a sequence of n tokens.
  RateState zero_state(std::size_t n) const;
  /// Constant drive of the input neurons: 0.5 + token + position embedding.
  Matrix input_drive(const TokenIds& tokens) const;
};

/// Strips trailing PAD (id 0) tokens; the model never sees padding.
TokenIds strip_padding(const TokenIds& tokens);

// ---------------------------------------------------------------------------
// Steady-state map recorded on an autodiff tape.

struct LinearVars {
  ad::Var w, b;
};

struct LayerVars {
  LinearVars query, key, value, attn_out, ff_in, ff_out;
  ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct StudentVars {
  ad::Var token_embedding, position_embedding;
  std::vector<LayerVars> layers;
  std::optional<LinearVars> feedback;
  LinearVars head;
  std::vector<ad::Var> flat;  // same order as EncoderStack::parameters()
};

/// Binds every parameter as a tape leaf (trainable) or as a constant.
StudentVars bind_parameters(ad::Tape& tape, const EncoderStack& stack, bool trainable = true);

struct SweepGraph {
  std::vector<ad::Var> in;   // state leaves
  std::vector<ad::Var> out;  // updated rates
};

/// One blockwise Gauss-Seidel sweep F(a): every neuron layer is recomputed
/// from the freshest upstream rates, so within-block and block-to-block
/// feed-forward coupling resolves in one pass and only the feedback
/// connection reads the previous iterate. Fixed points of F are the
/// steady-state rates a* = clip((W a* + b) / v_th).
SweepGraph record_sweep(ad::Tape& tape, const StudentVars& vars, const EncoderStack& stack, const TokenIds& tokens,
                        const RateState& state);

/// Plain evaluation of the sweep.
RateState sweep(const EncoderStack& stack, const TokenIds& tokens, const RateState& state);

/// Classifier logits (1 x classes) from the final block's rates.
ad::Var record_logits(ad::Tape& tape, const StudentVars& vars, ad::Var final_rates);
Matrix student_logits(const EncoderStack& stack, const Matrix& final_rates);

/// clip((x W^T + b) / v_th) for a single quantized projection; rates in
/// [0, 1] are required (DomainError otherwise).
Matrix steady_state_layer(const Matrix& asr_in, const QuantizedLinear& layer, double v_th);

/// Multi-head attention over rate matrices; see ops::attention.
Matrix spiking_attention(const Matrix& q_asr, const Matrix& k_asr, const Matrix& v_asr, std::size_t num_heads);

// ---------------------------------------------------------------------------
// Full-precision non-spiking teacher.

struct TeacherConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t hidden_dim = 64;
  std::size_t intermediate_dim = 128;
  std::size_t num_heads = 2;
  std::size_t num_layers = 2;
  std::size_t num_classes = 2;

  void validate() const;
};

struct TeacherLayer {
  QuantizedLinear query, key, value, attn_out, ff_in, ff_out;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct TeacherOutput {
  std::vector<Matrix> hiddens;  // one n x hidden matrix per block, post-norm
  Matrix logits;                // 1 x classes
};

class TeacherModel {
 public:
  TeacherConfig cfg;
  Matrix token_embedding;
  Matrix position_embedding;
  std::vector<TeacherLayer> layers;
  QuantizedLinear head;

  static TeacherModel random(const TeacherConfig& cfg, Rng& rng);
  /// All parameters zero (layer-norm gains included).
  static TeacherModel zeros(const TeacherConfig& cfg);

  std::vector<ParamSlot> parameters();
  TeacherOutput forward(const TokenIds& tokens) const;
};

struct TeacherGraph {
  std::vector<ad::Var> params;  // same order as TeacherModel::parameters()
  std::vector<ad::Var> hiddens;
  ad::Var logits;
};

TeacherGraph record_teacher(ad::Tape& tape, const TeacherModel& teacher, const TokenIds& tokens, bool trainable = true);

}  // namespace qspike

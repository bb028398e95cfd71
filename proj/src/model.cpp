#include "qspike/model.hpp"

#include <algorithm>

#include "qspike/ops.hpp"

namespace qspike {

namespace {

// Initial layer-norm surrogate output: rates centred in the clip's linear
// region with a spread of a quarter.
constexpr double kNormGainInit = 0.25;
constexpr double kNormBiasInit = 0.5;
// Bias of projections feeding spiking populations directly.
constexpr double kDriveBiasInit = 0.5;
constexpr double kInputOffset = 0.5;
constexpr double kTokenEmbeddingBound = 0.25;
constexpr double kPositionEmbeddingBound = 0.1;

template <typename Layer, typename F>
void visit_linear(Layer& l, const std::string& prefix, F&& f) {
  f(prefix + ".weight", l.latent, l.effective_weight(), &l);
  f(prefix + ".bias", l.bias, l.bias, nullptr);
}

template <typename Block, typename F>
void visit_block(Block& b, const std::string& p, F&& f) {
  visit_linear(b.query, p + ".query", f);
  visit_linear(b.key, p + ".key", f);
  visit_linear(b.value, p + ".value", f);
  visit_linear(b.attn_out, p + ".attn_out", f);
  f(p + ".ln1.gain", b.ln1_gain, b.ln1_gain, nullptr);
  f(p + ".ln1.bias", b.ln1_bias, b.ln1_bias, nullptr);
  visit_linear(b.ff_in, p + ".ff_in", f);
  visit_linear(b.ff_out, p + ".ff_out", f);
  f(p + ".ln2.gain", b.ln2_gain, b.ln2_gain, nullptr);
  f(p + ".ln2.bias", b.ln2_bias, b.ln2_bias, nullptr);
}

// Single source of truth for parameter order; works for const and mutable models.
template <typename Model, typename F>
void visit_params(Model& m, F&& f) {
  f(std::string("token_embedding"), m.token_embedding, m.token_embedding, nullptr);
  f(std::string("position_embedding"), m.position_embedding, m.position_embedding, nullptr);
  for (std::size_t b = 0; b < m.layers.size(); ++b) visit_block(m.layers[b], "block" + std::to_string(b), f);
  if constexpr (requires { m.feedback; }) {
    if (m.feedback) visit_linear(*m.feedback, "feedback", f);
  }
  visit_linear(m.head, "head", f);
}

void check_rates(const Matrix& a, const char* what) {
  for (double v : a.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(what) + ": rates must lie in [0, 1]");
  }
}

}  // namespace

void EncoderLayerConfig::validate() const {
  if (hidden_dim == 0 || intermediate_dim == 0 || num_heads == 0) throw ConfigError("layer dims must be positive");
  if (hidden_dim % num_heads != 0) throw ConfigError("hidden_dim must be divisible by num_heads");
}

void StudentConfig::validate() const {
  layer.validate();
  lif.validate();
  if (num_layers == 0) throw ConfigError("student needs at least one encoder layer");
  if (vocab_size < 4) throw ConfigError("vocabulary must include the special tokens");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (feedback_scale < 0.0) throw ConfigError("feedback_scale must be nonnegative");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

EncoderStack EncoderStack::random(const StudentConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderStack s;
  s.cfg = cfg;
  const std::size_t d = cfg.layer.hidden_dim, ff = cfg.layer.intermediate_dim;
  const QuantMode m = cfg.layer.quant_mode;
  s.token_embedding = uniform_matrix(cfg.vocab_size, d, kTokenEmbeddingBound, rng);
  s.position_embedding = uniform_matrix(cfg.max_len, d, kPositionEmbeddingBound, rng);
  for (std::size_t b = 0; b < cfg.num_layers; ++b) {
    SpikingEncoderLayer l;
    l.query = QuantizedLinear(d, d, m, rng, kDriveBiasInit);
    l.key = QuantizedLinear(d, d, m, rng, kDriveBiasInit);
    l.value = QuantizedLinear(d, d, m, rng, kDriveBiasInit);
    l.attn_out = QuantizedLinear(d, d, m, rng, 0.0);
    l.ff_in = QuantizedLinear(ff, d, m, rng, kDriveBiasInit);
    l.ff_out = QuantizedLinear(d, ff, m, rng, 0.0);
    l.ln1_gain = Matrix(1, d, kNormGainInit);
    l.ln1_bias = Matrix(1, d, kNormBiasInit);
    l.ln2_gain = Matrix(1, d, kNormGainInit);
    l.ln2_bias = Matrix(1, d, kNormBiasInit);
    s.layers.push_back(std::move(l));
  }
  if (cfg.feedback_scale > 0.0) {
    QuantizedLinear fb(uniform_matrix(d, d, cfg.feedback_scale / std::sqrt(static_cast<double>(d)), rng),
                       Matrix(1, d), m);
    s.feedback = std::move(fb);
  }
  s.head = QuantizedLinear(cfg.num_classes, d, QuantMode::FullPrecision, rng, 0.0);
  for (auto* p : s.projections()) {
    p->epsilon = cfg.epsilon;
    p->binary_scale = cfg.binary_scale;
    p->refresh();
  }
  return s;
}

std::vector<QuantizedLinear*> EncoderStack::projections() {
  std::vector<QuantizedLinear*> out;
  for (auto& l : layers) {
    for (auto* p : {&l.query, &l.key, &l.value, &l.attn_out, &l.ff_in, &l.ff_out}) out.push_back(p);
  }
  if (feedback) out.push_back(&*feedback);
  return out;
}

std::vector<const QuantizedLinear*> EncoderStack::projections() const {
  std::vector<const QuantizedLinear*> out;
  for (const auto* p : const_cast<EncoderStack*>(this)->projections()) out.push_back(p);
  return out;
}

void EncoderStack::set_quant_mode(QuantMode mode) {
  cfg.layer.quant_mode = mode;
  for (auto* p : projections()) {
    p->mode = mode;
    p->refresh();
  }
}

void EncoderStack::refresh_quantization() {
  for (auto* p : projections()) p->refresh();
}

std::vector<ParamSlot> EncoderStack::parameters() {
  std::vector<ParamSlot> out;
  visit_params(*this, [&](const std::string& name, Matrix& v, const Matrix& fwd, QuantizedLinear* owner) {
    out.push_back(ParamSlot{name, &v, &fwd, owner});
  });
  return out;
}

std::size_t EncoderStack::layer_width(std::size_t index) const {
  if (index == 0) return hidden();
  const auto s = static_cast<Sublayer>((index - 1) % kSublayersPerBlock);
  return s == Sublayer::Intermediate ? cfg.layer.intermediate_dim : hidden();
}

std::string EncoderStack::layer_name(std::size_t index) const {
  if (index == 0) return "input";
  static const char* names[] = {"query", "key", "value", "attention", "attn_out", "intermediate", "output"};
  const std::size_t block = (index - 1) / kSublayersPerBlock;
  return "block" + std::to_string(block) + "." + names[(index - 1) % kSublayersPerBlock];
}

RateState EncoderStack::zero_state(std::size_t n) const {
  RateState s;
  for (std::size_t i = 0; i < num_neuron_layers(); ++i) s.emplace_back(n, layer_width(i));
  return s;
}

Matrix EncoderStack::input_drive(const TokenIds& tokens) const {
  if (tokens.size() > cfg.max_len) throw ShapeError("sequence longer than max_len");
  Matrix x(tokens.size(), hidden());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= token_embedding.rows()) throw ShapeError("token id outside vocabulary");
    for (std::size_t c = 0; c < hidden(); ++c)
      x(i, c) = kInputOffset + token_embedding(tokens[i], c) + position_embedding(i, c);
  }
  return x;
}

TokenIds strip_padding(const TokenIds& tokens) {
  TokenIds out = tokens;
  while (!out.empty() && out.back() == 0) out.pop_back();
  return out;
}

StudentVars bind_parameters(ad::Tape& tape, const EncoderStack& stack, bool trainable) {
  StudentVars v;
  visit_params(stack, [&](const std::string&, const Matrix&, const Matrix& fwd, const QuantizedLinear*) {
    v.flat.push_back(trainable ? tape.param(fwd) : tape.constant_ref(fwd));
  });
  std::size_t i = 0;
  auto next = [&] { return v.flat.at(i++); };
  auto lin = [&] {
    LinearVars l;
    l.w = next();
    l.b = next();
    return l;
  };
  v.token_embedding = next();
  v.position_embedding = next();
  for (std::size_t b = 0; b < stack.layers.size(); ++b) {
    LayerVars l;
    l.query = lin();
    l.key = lin();
    l.value = lin();
    l.attn_out = lin();
    l.ln1_gain = next();
    l.ln1_bias = next();
    l.ff_in = lin();
    l.ff_out = lin();
    l.ln2_gain = next();
    l.ln2_bias = next();
    v.layers.push_back(l);
  }
  if (stack.feedback) v.feedback = lin();
  v.head = lin();
  return v;
}

namespace {

ad::Var affine(ad::Tape& t, ad::Var x, const LinearVars& l) { return ad::add_row(t, ad::linear(t, x, l.w), l.b); }

}  // namespace

SweepGraph record_sweep(ad::Tape& t, const StudentVars& vars, const EncoderStack& stack, const TokenIds& tokens,
                        const RateState& state) {
  if (state.size() != stack.num_neuron_layers()) throw ShapeError("record_sweep: state has wrong layer count");
  const double vth = stack.cfg.lif.v_th;
  const std::size_t n = tokens.size();
  SweepGraph g;
  for (const auto& m : state) {
    if (m.rows() != n) throw ShapeError("record_sweep: state rows do not match sequence length");
    g.in.push_back(t.state(m));
  }
  g.out.resize(state.size());

  ad::Var drive = ad::shift(
      t, ad::add(t, ad::gather_rows(t, vars.token_embedding, tokens), ad::head_rows(t, vars.position_embedding, n)),
      kInputOffset);
  if (vars.feedback) drive = ad::add(t, drive, affine(t, g.in[stack.output_index()], *vars.feedback));
  g.out[0] = ad::rate(t, drive, vth);

  ad::Var x = g.out[0];
  const std::size_t heads = stack.cfg.layer.num_heads;
  for (std::size_t b = 0; b < stack.layers.size(); ++b) {
    const LayerVars& lv = vars.layers[b];
    auto idx = [b](Sublayer s) { return EncoderStack::layer_index(b, s); };
    const ad::Var q = ad::rate(t, affine(t, x, lv.query), vth);
    const ad::Var k = ad::rate(t, affine(t, x, lv.key), vth);
    const ad::Var v = ad::rate(t, affine(t, x, lv.value), vth);
    const ad::Var att = ad::rate(t, ad::attention(t, q, k, v, heads), vth);
    const ad::Var z1 = ad::add(t, affine(t, att, lv.attn_out), x);
    const ad::Var h1 = ad::rate(t, ad::layer_norm(t, z1, lv.ln1_gain, lv.ln1_bias), vth);
    const ad::Var mid = ad::rate(t, affine(t, h1, lv.ff_in), vth);
    const ad::Var z2 = ad::add(t, affine(t, mid, lv.ff_out), h1);
    const ad::Var h2 = ad::rate(t, ad::layer_norm(t, z2, lv.ln2_gain, lv.ln2_bias), vth);
    g.out[idx(Sublayer::Query)] = q;
    g.out[idx(Sublayer::Key)] = k;
    g.out[idx(Sublayer::Value)] = v;
    g.out[idx(Sublayer::Attention)] = att;
    g.out[idx(Sublayer::AttentionOut)] = h1;
    g.out[idx(Sublayer::Intermediate)] = mid;
    g.out[idx(Sublayer::Output)] = h2;
    x = h2;
  }
  return g;
}

RateState sweep(const EncoderStack& stack, const TokenIds& tokens, const RateState& state) {
  ad::Tape tape;
  const StudentVars vars = bind_parameters(tape, stack, false);
  const SweepGraph g = record_sweep(tape, vars, stack, tokens, state);
  RateState out;
  out.reserve(g.out.size());
  for (ad::Var v : g.out) out.push_back(tape.value(v));
  return out;
}

ad::Var record_logits(ad::Tape& t, const StudentVars& vars, ad::Var final_rates) {
  return affine(t, ad::mean_rows(t, final_rates), vars.head);
}

Matrix student_logits(const EncoderStack& stack, const Matrix& final_rates) {
  return quantized_forward(stack.head, ops::mean_rows(final_rates));
}

Matrix steady_state_layer(const Matrix& asr_in, const QuantizedLinear& layer, double v_th) {
  check_rates(asr_in, "steady_state_layer");
  return ops::rate(quantized_forward(layer, asr_in), v_th);
}

Matrix spiking_attention(const Matrix& q_asr, const Matrix& k_asr, const Matrix& v_asr, std::size_t num_heads) {
  return ops::attention(q_asr, k_asr, v_asr, num_heads);
}

// ---------------------------------------------------------------------------

void TeacherConfig::validate() const {
  if (hidden_dim == 0 || intermediate_dim == 0 || num_heads == 0 || num_layers == 0) {
    throw ConfigError("teacher dims must be positive");
  }
  if (hidden_dim % num_heads != 0) throw ConfigError("teacher hidden_dim must be divisible by num_heads");
  if (vocab_size < 4 || max_len < 2 || num_classes < 2) throw ConfigError("teacher vocabulary/length/classes");
}

TeacherModel TeacherModel::random(const TeacherConfig& cfg, Rng& rng) {
  cfg.validate();
  TeacherModel t;
  t.cfg = cfg;
  const std::size_t d = cfg.hidden_dim, ff = cfg.intermediate_dim;
  const double emb = 1.0 / std::sqrt(static_cast<double>(d));
  t.token_embedding = uniform_matrix(cfg.vocab_size, d, emb, rng);
  t.position_embedding = uniform_matrix(cfg.max_len, d, emb, rng);
  for (std::size_t b = 0; b < cfg.num_layers; ++b) {
    TeacherLayer l;
    const auto fp = QuantMode::FullPrecision;
    l.query = QuantizedLinear(d, d, fp, rng);
    l.key = QuantizedLinear(d, d, fp, rng);
    l.value = QuantizedLinear(d, d, fp, rng);
    l.attn_out = QuantizedLinear(d, d, fp, rng);
    l.ff_in = QuantizedLinear(ff, d, fp, rng);
    l.ff_out = QuantizedLinear(d, ff, fp, rng);
    l.ln1_gain = Matrix(1, d, 1.0);
    l.ln1_bias = Matrix(1, d);
    l.ln2_gain = Matrix(1, d, 1.0);
    l.ln2_bias = Matrix(1, d);
    t.layers.push_back(std::move(l));
  }
  t.head = QuantizedLinear(cfg.num_classes, d, QuantMode::FullPrecision, rng);
  return t;
}

TeacherModel TeacherModel::zeros(const TeacherConfig& cfg) {
  Rng rng(0);
  TeacherModel t = random(cfg, rng);
  for (auto& p : t.parameters()) p.value->fill(0.0);
  return t;
}

std::vector<ParamSlot> TeacherModel::parameters() {
  std::vector<ParamSlot> out;
  visit_params(*this, [&](const std::string& name, Matrix& v, const Matrix& fwd, QuantizedLinear* owner) {
    out.push_back(ParamSlot{name, &v, &fwd, owner});
  });
  return out;
}

TeacherGraph record_teacher(ad::Tape& t, const TeacherModel& m, const TokenIds& tokens, bool trainable) {
  TeacherGraph g;
  visit_params(m, [&](const std::string&, const Matrix&, const Matrix& fwd, const QuantizedLinear*) {
    g.params.push_back(trainable ? t.param(fwd) : t.constant_ref(fwd));
  });
  std::size_t i = 0;
  auto next = [&] { return g.params.at(i++); };
  auto lin = [&] {
    LinearVars l;
    l.w = next();
    l.b = next();
    return l;
  };
  const std::size_t n = tokens.size();
  if (n > m.cfg.max_len) throw ShapeError("sequence longer than teacher max_len");
  const ad::Var tok = next();
  const ad::Var pos = next();
  ad::Var x = ad::add(t, ad::gather_rows(t, tok, tokens), ad::head_rows(t, pos, n));
  for (std::size_t b = 0; b < m.layers.size(); ++b) {
    const LinearVars q = lin(), k = lin(), v = lin(), o = lin();
    const ad::Var g1 = next(), b1 = next();
    const LinearVars f1 = lin(), f2 = lin();
    const ad::Var g2 = next(), b2 = next();
    const ad::Var att = ad::attention(t, affine(t, x, q), affine(t, x, k), affine(t, x, v), m.cfg.num_heads);
    const ad::Var h = ad::layer_norm(t, ad::add(t, x, affine(t, att, o)), g1, b1);
    const ad::Var f = affine(t, ad::gelu(t, affine(t, h, f1)), f2);
    x = ad::layer_norm(t, ad::add(t, h, f), g2, b2);
    g.hiddens.push_back(x);
  }
  const LinearVars head = lin();
  g.logits = affine(t, ad::mean_rows(t, x), head);
  return g;
}

TeacherOutput TeacherModel::forward(const TokenIds& tokens) const {
  ad::Tape tape;
  const TeacherGraph g = record_teacher(tape, *this, tokens, false);
  TeacherOutput out;
  for (ad::Var h : g.hiddens) out.hiddens.push_back(tape.value(h));
  out.logits = tape.value(g.logits);
  return out;
}

}  // namespace qspike

#include "qspike/simulate.hpp"

#include <numeric>

#include "qspike/ops.hpp"

namespace qspike {

namespace {

std::uint64_t count_spikes(const LifLayerState& s) {
  return static_cast<std::uint64_t>(std::accumulate(s.spikes.begin(), s.spikes.end(), 0ULL));
}

// Drive for a population whose leak-weighted current sum should equal
// D[t] * target[t]:  I[t] = D[t] target[t] - gamma D[t-1] target[t-1].
Matrix tracking_current(const Matrix& target, const Matrix& prev_target, double d, double d_prev, double gamma) {
  Matrix cur(target.rows(), target.cols());
  for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = d * target[i] - gamma * d_prev * prev_target[i];
  return cur;
}

void add_spikes(Matrix& m, const std::vector<std::uint8_t>& spikes) {
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += spikes[i];
}

struct BlockMemory {
  Matrix attn_prev, norm1_prev, norm2_prev;  // previous tracking targets
  Matrix z1, z2;                             // leak-weighted normalization inputs
};

}  // namespace

InferenceResult student_forward_infer(const EncoderStack& stack, const TokenIds& raw_tokens,
                                      const SimulationOptions& opts) {
  if (opts.timesteps == 0) throw DomainError("student_forward_infer: timesteps must be at least 1");
  const TokenIds tokens = strip_padding(raw_tokens);
  if (tokens.empty()) throw ShapeError("student_forward_infer: empty sequence");
  const std::size_t n = tokens.size();
  const std::size_t d = stack.hidden();
  const LifConfig& lif = stack.cfg.lif;
  const double gamma = lif.gamma;
  const bool par = opts.parallel_kernels;

  std::vector<LifLayerState> layers;
  for (std::size_t i = 0; i < stack.num_neuron_layers(); ++i) layers.emplace_back(n, stack.layer_width(i));

  InferenceResult res;
  res.timesteps = opts.timesteps;
  res.tokens = n;
  auto add_conn = [&](std::string name, std::size_t src, std::uint64_t fan) {
    res.connections.push_back(ConnectionOps{std::move(name), src, fan, 0});
    return res.connections.size() - 1;
  };

  struct BlockConns {
    std::size_t q, k, v, score, mix, out, ff1, ff2;
  };
  std::vector<BlockConns> conns;
  for (std::size_t b = 0; b < stack.layers.size(); ++b) {
    const auto& l = stack.layers[b];
    const std::string p = "block" + std::to_string(b) + ".";
    const std::size_t in = EncoderStack::block_input_index(b);
    auto idx = [b](Sublayer s) { return EncoderStack::layer_index(b, s); };
    BlockConns c;
    c.q = add_conn(p + "query", in, l.query.out_dim());
    c.k = add_conn(p + "key", in, l.key.out_dim());
    c.v = add_conn(p + "value", in, l.value.out_dim());
    c.score = add_conn(p + "attn_score", idx(Sublayer::Key), n);
    c.mix = add_conn(p + "attn_mix", idx(Sublayer::Value), n);
    c.out = add_conn(p + "attn_out", idx(Sublayer::Attention), l.attn_out.out_dim());
    c.ff1 = add_conn(p + "ff_in", idx(Sublayer::AttentionOut), l.ff_in.out_dim());
    c.ff2 = add_conn(p + "ff_out", idx(Sublayer::Intermediate), l.ff_out.out_dim());
    conns.push_back(c);
  }
  const std::size_t out_layer = stack.output_index();
  const std::size_t fb_conn = stack.feedback ? add_conn("feedback", out_layer, stack.feedback->out_dim()) : 0;
  const std::size_t head_conn = add_conn("head", out_layer, stack.head.out_dim());

  const Matrix drive = stack.input_drive(tokens);
  Matrix fb_current(n, d);
  if (stack.feedback) ops::add_row_inplace(fb_current, stack.feedback->bias);

  std::vector<BlockMemory> mem(stack.layers.size());
  for (auto& m : mem) {
    m.attn_prev = Matrix(n, d);
    m.norm1_prev = Matrix(n, d);
    m.norm2_prev = Matrix(n, d);
    m.z1 = Matrix(n, d);
    m.z2 = Matrix(n, d);
  }

  Matrix logits_num(1, stack.head.out_dim());
  Matrix cur;
  double den = 0.0;
  for (std::size_t t = 1; t <= opts.timesteps; ++t) {
    const double den_prev = den;
    den = gamma * den + 1.0;

    lif_step(layers[0], stack.feedback ? drive + fb_current : drive, lif);

    std::size_t x = 0;
    for (std::size_t b = 0; b < stack.layers.size(); ++b) {
      const auto& l = stack.layers[b];
      const BlockConns& c = conns[b];
      BlockMemory& m = mem[b];
      auto idx = [b](Sublayer s) { return EncoderStack::layer_index(b, s); };
      LifLayerState& q = layers[idx(Sublayer::Query)];
      LifLayerState& k = layers[idx(Sublayer::Key)];
      LifLayerState& v = layers[idx(Sublayer::Value)];
      LifLayerState& att = layers[idx(Sublayer::Attention)];
      LifLayerState& h1 = layers[idx(Sublayer::AttentionOut)];
      LifLayerState& mid = layers[idx(Sublayer::Intermediate)];
      LifLayerState& h2 = layers[idx(Sublayer::Output)];
      const std::uint8_t* sx = layers[x].spikes.data();

      res.connections[c.q].executed += l.query.forward_spikes(n, sx, cur, par);
      lif_step(q, cur, lif);
      res.connections[c.k].executed += l.key.forward_spikes(n, sx, cur, par);
      lif_step(k, cur, lif);
      res.connections[c.v].executed += l.value.forward_spikes(n, sx, cur, par);
      lif_step(v, cur, lif);

      res.connections[c.score].executed += n * count_spikes(k);
      res.connections[c.mix].executed += n * count_spikes(v);
      Matrix target = ops::attention(asr(q), asr(k), asr(v), stack.cfg.layer.num_heads);
      lif_step(att, tracking_current(target, m.attn_prev, den, den_prev, gamma), lif);
      m.attn_prev = std::move(target);

      res.connections[c.out].executed += l.attn_out.forward_spikes(n, att.spikes.data(), cur, par);
      add_spikes(cur, layers[x].spikes);
      m.z1 *= gamma;
      m.z1 += cur;
      target = ops::layer_norm(m.z1 * (1.0 / den), l.ln1_gain, l.ln1_bias);
      lif_step(h1, tracking_current(target, m.norm1_prev, den, den_prev, gamma), lif);
      m.norm1_prev = std::move(target);

      res.connections[c.ff1].executed += l.ff_in.forward_spikes(n, h1.spikes.data(), cur, par);
      lif_step(mid, cur, lif);

      res.connections[c.ff2].executed += l.ff_out.forward_spikes(n, mid.spikes.data(), cur, par);
      add_spikes(cur, h1.spikes);
      m.z2 *= gamma;
      m.z2 += cur;
      target = ops::layer_norm(m.z2 * (1.0 / den), l.ln2_gain, l.ln2_bias);
      lif_step(h2, tracking_current(target, m.norm2_prev, den, den_prev, gamma), lif);
      m.norm2_prev = std::move(target);

      x = idx(Sublayer::Output);
    }

    const std::uint8_t* so = layers[out_layer].spikes.data();
    res.connections[head_conn].executed += stack.head.forward_spikes(n, so, cur, par);
    logits_num *= gamma;
    logits_num += ops::mean_rows(cur);
    if (stack.feedback) res.connections[fb_conn].executed += stack.feedback->forward_spikes(n, so, fb_current, par);

    if (opts.on_step) opts.on_step(t, layers);
  }

  res.logits = logits_num * (1.0 / den);
  for (const auto& l : layers) {
    res.asr.push_back(asr(l));
    res.spike_counts.push_back(l.spike_counts);
  }
  return res;
}

}  // namespace qspike

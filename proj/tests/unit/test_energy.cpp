#include <gtest/gtest.h>

#include "qspike/energy.hpp"
#include "qspike/errors.hpp"

using namespace qspike;

namespace {

StudentConfig small_config(QuantMode mode) {
  StudentConfig c;
  c.vocab_size = 12;
  c.max_len = 8;
  c.layer.hidden_dim = 8;
  c.layer.intermediate_dim = 16;
  c.layer.num_heads = 2;
  c.layer.quant_mode = mode;
  return c;
}

const TokenIds kTokens{2, 5, 9, 3};

InferenceResult run(const EncoderStack& s, std::size_t T, const TokenIds& toks = kTokens) {
  SimulationOptions o;
  o.timesteps = T;
  return student_forward_infer(s, toks, o);
}

// Constant drive everywhere so every layer is periodic with period 1 or 2.
EncoderStack periodic_stack() {
  Rng rng(1);
  EncoderStack s = EncoderStack::random(small_config(QuantMode::FullPrecision), rng);
  s.token_embedding.fill(0.0);
  s.position_embedding.fill(0.0);
  for (auto* p : s.projections()) {
    p->latent.fill(0.0);
    p->bias.fill(1.0);
    p->refresh();
  }
  return s;
}

}  // namespace

TEST(Ifr, Arithmetic) {
  SpikeStats s;
  s.layer_names = {"a", "b", "c"};
  s.neurons = {3, 2, 5};
  s.spikes = {6, 8, 0};
  s.timesteps = 4;
  EXPECT_EQ(compute_ifr(s), (std::vector<double>{0.5, 1.0, 0.0}));
}

TEST(NormOps, ChainForm) {
  const std::vector<double> ops{10, 20, 30};
  EXPECT_EQ(norm_ops({0, 0, 0}, ops), 0.0);
  // The last layer drives nothing, so saturation reaches (20 + 30) / 60.
  EXPECT_DOUBLE_EQ(norm_ops({1, 1, 1}, ops), 50.0 / 60.0);
  EXPECT_DOUBLE_EQ(norm_ops({0.5, 0.25, 1}, ops), (0.5 * 20 + 0.25 * 30) / 60.0);
  EXPECT_THROW(norm_ops({1, 1}, ops), ConfigError);
}

TEST(NormOps, MonotoneInEveryLayer) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ifr(5), ops(5);
    for (std::size_t i = 0; i < 5; ++i) {
      ifr[i] = rng.uniform();
      ops[i] = 1 + rng.index(100);
    }
    const double base = norm_ops(ifr, ops);
    const std::size_t k = rng.index(5);
    ifr[k] = std::min(1.0, ifr[k] + 0.1);
    EXPECT_GE(norm_ops(ifr, ops), base);
  }
}

TEST(Energy, ExecutedMatchesPredictedInEveryMode) {
  for (QuantMode mode : {QuantMode::FullPrecision, QuantMode::Binary1Bit, QuantMode::Ternary158Bit}) {
    Rng rng(3);
    const EncoderStack s = EncoderStack::random(small_config(mode), rng);
    const auto r = run(s, 60);
    std::uint64_t executed = 0;
    for (const auto& c : r.connections) executed += c.executed;
    EXPECT_EQ(predicted_acc_ops(s, r), executed) << to_string(mode);
    const auto rep = energy_estimate(s, {r, run(s, 60, TokenIds{2, 7, 3})}, EnergyProfile{});
    EXPECT_EQ(rep.executed_acc, rep.predicted_acc);
    for (double f : rep.layer_ifr) {
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
    }
  }
}

TEST(Energy, TernaryZerosCostNothing) {
  Rng rng(4);
  EncoderStack s = EncoderStack::random(small_config(QuantMode::Ternary158Bit), rng);
  const auto r = run(s, 30);
  std::uint64_t dense = 0, executed = 0;
  for (const auto& c : r.connections) {
    executed += c.executed;
    const std::size_t src = c.source_layer;
    std::uint64_t spikes = 0;
    for (auto n : r.spike_counts[src]) spikes += n;
    dense += spikes * c.dense_fan_out;
  }
  EXPECT_LT(executed, dense);
}

TEST(Energy, DoublingHorizonDoublesOpsAndKeepsIfr) {
  const EncoderStack s = periodic_stack();
  const auto a = energy_estimate(s, {run(s, 10)}, EnergyProfile{});
  const auto b = energy_estimate(s, {run(s, 20)}, EnergyProfile{});
  EXPECT_EQ(a.layer_ifr, b.layer_ifr);
  EXPECT_DOUBLE_EQ(b.total_driven_ops, 2 * a.total_driven_ops);
  EXPECT_DOUBLE_EQ(b.energy_pj, 2 * a.energy_pj);
  EXPECT_EQ(b.executed_acc, 2 * a.executed_acc);
}

TEST(Energy, IdenticalActivityGivesNinthOfTheEnergy) {
  const EncoderStack fp = periodic_stack();
  EncoderStack q = fp;
  q.set_quant_mode(QuantMode::Binary1Bit);  // zero weights quantize to -1: only the op counts change
  const auto rf = energy_estimate(fp, {run(fp, 10)}, EnergyProfile{});
  const auto rq = energy_estimate(q, {run(q, 10)}, EnergyProfile{});
  const auto c = compare_energy(rq, rf);
  ASSERT_TRUE(c.norm_ops_ratio && c.energy_ratio);
  EXPECT_NEAR(*c.energy_ratio, *c.norm_ops_ratio / 9.0, 1e-12);
}

TEST(Energy, SilentModelHasUndefinedRatio) {
  Rng rng(5);
  EncoderStack s = EncoderStack::random(small_config(QuantMode::FullPrecision), rng);
  s.token_embedding.fill(-1.0);
  s.position_embedding.fill(0.0);
  for (auto* p : s.projections()) {
    p->latent.fill(0.0);
    p->bias.fill(-1.0);
    p->refresh();
  }
  for (auto& l : s.layers) {
    l.ln1_bias.fill(-1.0);
    l.ln2_bias.fill(-1.0);
  }
  const auto r = energy_estimate(s, {run(s, 20)}, EnergyProfile{});
  EXPECT_EQ(r.norm_ops, 0.0);
  EXPECT_EQ(r.energy_pj, 0.0);
  EncoderStack q = s;
  q.set_quant_mode(QuantMode::Ternary158Bit);
  const auto c = compare_energy(energy_estimate(q, {run(q, 20)}, EnergyProfile{}), r);
  EXPECT_FALSE(c.norm_ops_ratio.has_value());
  EXPECT_FALSE(c.energy_ratio.has_value());
  EXPECT_TRUE(to_json(c)["norm_ops_ratio"].is_null());
}

TEST(Energy, ArchitectureMismatchRejected) {
  Rng rng(6);
  const EncoderStack a = EncoderStack::random(small_config(QuantMode::Ternary158Bit), rng);
  StudentConfig c = small_config(QuantMode::FullPrecision);
  c.num_layers = 1;
  const EncoderStack b = EncoderStack::random(c, rng);
  EXPECT_THROW(compare_energy(energy_estimate(a, {run(a, 5)}, EnergyProfile{}), energy_estimate(b, {run(b, 5)}, EnergyProfile{})),
               ConfigError);
}

TEST(Energy, ProfileValidation) {
  EXPECT_THROW((EnergyProfile{0.9, 0.0}.validate()), ConfigError);
  EXPECT_DOUBLE_EQ(EnergyProfile{}.acc_pj(QuantMode::FullPrecision) / EnergyProfile{}.acc_pj(QuantMode::Binary1Bit), 9.0);
}

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "qspike/equilibrium.hpp"
#include "qspike/errors.hpp"
#include "qspike/ops.hpp"
#include "qspike/simulate.hpp"

using namespace qspike;

namespace {

StudentConfig small_config(double feedback = 0.0, QuantMode mode = QuantMode::FullPrecision) {
  StudentConfig c;
  c.vocab_size = 20;
  c.max_len = 8;
  c.layer.hidden_dim = 8;
  c.layer.intermediate_dim = 16;
  c.layer.num_heads = 2;
  c.layer.quant_mode = mode;
  c.feedback_scale = feedback;
  return c;
}

const TokenIds kTokens{2, 7, 11, 4, 3};

void zero_weights(EncoderStack& s, double bias) {
  for (auto* p : s.projections()) {
    p->latent.fill(0.0);
    p->bias.fill(bias);
    p->refresh();
  }
}

}  // namespace

TEST(SteadyStateLayer, ZeroWeightsGiveClippedBias) {
  const Matrix in{{0.2, 0.9, 0.4}};
  EXPECT_EQ(steady_state_layer(in, QuantizedLinear(Matrix(2, 3), Matrix(1, 2, 0.3), QuantMode::FullPrecision), 1.0),
            Matrix(1, 2, 0.3));
  EXPECT_EQ(steady_state_layer(in, QuantizedLinear(Matrix(2, 3), Matrix(1, 2, 2.0), QuantMode::FullPrecision), 1.0),
            Matrix(1, 2, 1.0));
}

TEST(SteadyStateLayer, OutOfRangeInputThrows) {
  const QuantizedLinear l(Matrix(2, 3), Matrix(1, 2), QuantMode::FullPrecision);
  EXPECT_THROW(steady_state_layer(Matrix{{0.2, 1.5, 0.0}}, l, 1.0), DomainError);
  EXPECT_THROW(steady_state_layer(Matrix{{-0.1, 0.5, 0.0}}, l, 1.0), DomainError);
}

TEST(SteadyStateLayer, IdentityKeepsFixedPoint) {
  const QuantizedLinear l(Matrix::identity(1), Matrix(1, 1), QuantMode::FullPrecision);
  const RateMap f = [&](const RateState& a) { return RateState{steady_state_layer(a[0], l, 1.0)}; };
  const auto sol = solve_fixed_point(f, RateState{Matrix{{0.4}}}, SolverConfig{});
  EXPECT_TRUE(sol.converged);
  EXPECT_LT(sol.residual_history.back(), 1e-8);
  EXPECT_DOUBLE_EQ(sol.asr_star[0][0], 0.4);
}

TEST(Attention, SingleTokenReturnsValueRow) {
  const Matrix v{{0.3, 0.8, 0.1, 0.6}};
  EXPECT_LE(max_abs_diff(spiking_attention(Matrix{{0.9, 0.2, 0.5, 0.5}}, Matrix{{0.1, 0.4, 0.7, 0.2}}, v, 2), v), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  const Matrix q{{0.9, 0.1}, {0.2, 0.7}, {0.5, 0.5}};
  const Matrix k{{0.3, 0.6}, {0.3, 0.6}, {0.3, 0.6}};
  const Matrix v{{0.0, 0.3}, {0.6, 0.9}, {0.3, 0.0}};
  const Matrix out = spiking_attention(q, k, v, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(out(i, 0), 0.3, 1e-15);
    EXPECT_NEAR(out(i, 1), 0.4, 1e-15);
  }
}

TEST(Attention, TwoTokenHandExample) {
  // Scores q.k / sqrt(2) = [[0.707, 0], [0, 0.707]]; softmax row 0 = [0.670, 0.330].
  const Matrix eye = Matrix::identity(2);
  const Matrix v{{0.1, 0.2}, {0.3, 0.4}};
  const Matrix out = spiking_attention(eye, eye, v, 1);
  EXPECT_NEAR(out(0, 0), 0.166, 1e-3);
  EXPECT_NEAR(out(0, 1), 0.266, 1e-3);
  EXPECT_NEAR(out(1, 0), 0.234, 1e-3);
  EXPECT_NEAR(out(1, 1), 0.334, 1e-3);
}

TEST(Solver, ScalarContractionReachesPointFour) {
  const RateMap f = [](const RateState& a) { return RateState{Matrix{{ops::clip01(0.5 * a[0][0] + 0.2)}}}; };
  SolverConfig cfg;
  cfg.tol = 1e-11;
  const auto sol = solve_fixed_point(f, RateState{Matrix{{0.0}}}, cfg);
  EXPECT_TRUE(sol.converged);
  EXPECT_LE(sol.iters_used, 60u);
  EXPECT_NEAR(sol.asr_star[0][0], 0.4, 1e-10);
  EXPECT_EQ(sol.residual_history.size(), sol.iters_used);
}

TEST(Solver, IterationCountGrowsWithLogTolerance) {
  const RateMap f = [](const RateState& a) { return RateState{Matrix{{ops::clip01(0.5 * a[0][0] + 0.2)}}}; };
  std::vector<std::size_t> iters;
  for (double tol : {1e-3, 1e-6, 1e-9, 1e-12}) {
    SolverConfig cfg;
    cfg.tol = tol;
    iters.push_back(solve_fixed_point(f, RateState{Matrix{{0.0}}}, cfg).iters_used);
  }
  // Contraction factor 0.5: every factor 1000 in tolerance costs about log2(1000) ~ 10 iterations.
  for (std::size_t i = 1; i < iters.size(); ++i) EXPECT_NEAR(static_cast<double>(iters[i] - iters[i - 1]), 10.0, 1.0);
}

TEST(Solver, ExhaustedBudgetThrowsWithResiduals) {
  const RateMap f = [](const RateState& a) { return RateState{Matrix{{ops::clip01(0.9 * a[0][0] + 0.05)}}}; };
  SolverConfig cfg;
  cfg.max_iters = 5;
  try {
    solve_fixed_point(f, RateState{Matrix{{0.0}}}, cfg);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.residuals().size(), 5u);
  }
}

TEST(Solver, ZeroWeightStackConvergesImmediately) {
  Rng rng(1);
  EncoderStack s = EncoderStack::random(small_config(), rng);
  zero_weights(s, 0.3);
  const auto a = solve_fixed_point(s, kTokens, SolverConfig{});
  const auto b = solve_fixed_point(s, TokenIds{2, 15, 3}, SolverConfig{});
  EXPECT_LE(a.iters_used, 2u);
  for (std::size_t blk = 0; blk < s.layers.size(); ++blk)
    for (Sublayer sub : {Sublayer::Query, Sublayer::Key, Sublayer::Value, Sublayer::Intermediate}) {
      const std::size_t l = EncoderStack::layer_index(blk, sub);
      for (double v : a.asr_star[l].values()) EXPECT_DOUBLE_EQ(v, 0.3);
      for (double v : b.asr_star[l].values()) EXPECT_DOUBLE_EQ(v, 0.3);
    }
}

TEST(Solver, CertificateAndRange) {
  for (double fb : {0.0, 0.8}) {
    Rng rng(2);
    const EncoderStack s = EncoderStack::random(small_config(fb), rng);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    const auto sol = solve_fixed_point(s, kTokens, cfg);
    ASSERT_TRUE(sol.converged);
    EXPECT_LE(sup_residual(sweep(s, kTokens, sol.asr_star), sol.asr_star), cfg.tol);
    for (const auto& m : sol.asr_star)
      for (double v : m.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
  }
}

TEST(Solver, DampingDoesNotMoveTheFixedPoint) {
  Rng rng(3);
  const EncoderStack s = EncoderStack::random(small_config(0.8), rng);
  SolverConfig full, half;
  full.tol = half.tol = 1e-10;
  half.damping = 0.5;
  const auto a = solve_fixed_point(s, kTokens, full), b = solve_fixed_point(s, kTokens, half);
  ASSERT_TRUE(a.converged && b.converged);
  for (std::size_t l = 0; l < a.asr_star.size(); ++l) EXPECT_LE(max_abs_diff(a.asr_star[l], b.asr_star[l]), 10 * full.tol);
}

TEST(Solver, Deterministic) {
  Rng r1(4), r2(4);
  const EncoderStack a = EncoderStack::random(small_config(0.8), r1), b = EncoderStack::random(small_config(0.8), r2);
  EXPECT_EQ(solve_fixed_point(a, kTokens, SolverConfig{}).residual_history,
            solve_fixed_point(b, kTokens, SolverConfig{}).residual_history);
}

TEST(Solver, PaddingIsIgnored) {
  Rng rng(5);
  const EncoderStack s = EncoderStack::random(small_config(), rng);
  TokenIds padded = kTokens;
  padded.resize(8, 0);
  const auto a = solve_fixed_point(s, kTokens, SolverConfig{}), b = solve_fixed_point(s, padded, SolverConfig{});
  EXPECT_EQ(a.asr_star, b.asr_star);
}

TEST(Solver, InvalidConfigRejected) {
  SolverConfig c;
  c.damping = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.damping = 1.0;
  c.tol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Temporal, MatchesFixedPoint) {
  for (QuantMode mode : {QuantMode::FullPrecision, QuantMode::Binary1Bit, QuantMode::Ternary158Bit})
    for (double fb : {0.0, 0.5}) {
      Rng rng(6);
      const EncoderStack s = EncoderStack::random(small_config(fb, mode), rng);
      SolverConfig cfg;
      cfg.tol = 1e-8;
      const auto sol = solve_fixed_point(s, kTokens, cfg);
      SimulationOptions opts;
      opts.timesteps = 500;
      const auto run = student_forward_infer(s, kTokens, opts);
      for (std::size_t l = 0; l < sol.asr_star.size(); ++l) {
        double dev = 0.0;
        for (std::size_t i = 0; i < run.asr[l].size(); ++i) dev += std::abs(run.asr[l][i] - sol.asr_star[l][i]);
        EXPECT_LE(dev / static_cast<double>(run.asr[l].size()), 0.02) << s.layer_name(l);
      }
    }
}

TEST(Temporal, LongerHorizonShrinksDeviation) {
  Rng rng(7);
  const EncoderStack s = EncoderStack::random(small_config(), rng);
  const auto tr = convergence_trace(s, {kTokens}, 500, SolverConfig{});
  double at50 = 0.0, at500 = 0.0;
  for (std::size_t l = 0; l < tr.layer_names.size(); ++l) {
    at50 += tr.residual[l][49];
    at500 += tr.residual[l][499];
  }
  EXPECT_LT(at500, at50);
}

TEST(Temporal, SubThresholdSingleStepIsSilent) {
  Rng rng(8);
  EncoderStack s = EncoderStack::random(small_config(), rng);
  zero_weights(s, 0.0);
  s.token_embedding.fill(-0.25);
  s.position_embedding.fill(0.0);
  SimulationOptions opts;
  opts.timesteps = 1;
  const auto run = student_forward_infer(s, kTokens, opts);
  EXPECT_EQ(run.spike_counts[0], std::vector<std::uint64_t>(run.spike_counts[0].size(), 0));
  EXPECT_LE(max_abs_diff(run.logits, s.head.bias), 1e-15);
}

TEST(Trace, SaturatedLayerStaysAtOne) {
  Rng rng(9);
  EncoderStack s = EncoderStack::random(small_config(), rng);
  s.layers[0].query.latent.fill(0.0);
  s.layers[0].query.bias.fill(2.0);
  s.layers[0].query.refresh();
  const auto tr = convergence_trace(s, {kTokens}, 50, SolverConfig{});
  const std::size_t q = EncoderStack::layer_index(0, Sublayer::Query);
  for (double v : tr.mean_asr[q]) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_EQ(tr.steps_to_tolerance(q, 1e-12), 1u);
}

TEST(Trace, FinalPointNearFixedPointAndCsvShape) {
  Rng rng(10);
  const EncoderStack s = EncoderStack::random(small_config(0.5), rng);
  const std::size_t T = 300;
  const auto tr = convergence_trace(s, {kTokens, TokenIds{2, 9, 3}}, T, SolverConfig{});
  for (std::size_t l = 0; l < tr.layer_names.size(); ++l)
    EXPECT_LE(std::abs(tr.mean_asr[l].back() - tr.star_mean[l]), 0.02) << tr.layer_names[l];
  std::ostringstream os;
  write_trace_csv(tr, os);
  std::istringstream in(os.str());
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "step,layer_name,mean_asr,residual");
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, T * s.num_neuron_layers());
  EXPECT_EQ(tr.temporal_logits.size(), 2u);
}

TEST(Trace, StepsToToleranceAndMonotonicity) {
  ConvergenceTrace tr;
  tr.residual = {{0.5, 0.1, 0.3, 0.01, 0.02, 0.005}};
  EXPECT_EQ(tr.steps_to_tolerance(0, 0.02), 4u);
  EXPECT_EQ(tr.steps_to_tolerance(0, 0.001), 0u);
  EXPECT_FALSE(nonincreasing_after(tr.residual[0], 0));
  EXPECT_FALSE(nonincreasing_after(tr.residual[0], 3));
  EXPECT_TRUE(nonincreasing_after(tr.residual[0], 4));
}

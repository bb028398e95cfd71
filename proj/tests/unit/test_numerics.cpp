#include <gtest/gtest.h>

#include <cmath>

#include "qspike/adam.hpp"
#include "qspike/errors.hpp"
#include "qspike/finite_diff.hpp"
#include "qspike/kernels.hpp"
#include "qspike/matrix.hpp"
#include "qspike/rng.hpp"

using namespace qspike;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Matrix, IdentityTimesMatrix) {
  const Matrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
}

TEST(Matrix, ProjectorTimesColumn) {
  EXPECT_EQ(matmul(Matrix{{1, 0}, {0, 0}}, Matrix{{5}, {7}}), (Matrix{{5}, {0}}));
}

TEST(Matrix, MatchesTripleLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = uniform_matrix(3, 4, 1.0, rng), b = uniform_matrix(4, 2, 1.0, rng);
    const Matrix want = triple_loop(a, b);
    const Matrix got = matmul(a, b);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(got[i], want[i]);
  }
}

TEST(Matrix, TransposedVariantsAgree) {
  Rng rng(4);
  const Matrix a = uniform_matrix(5, 3, 1.0, rng), b = uniform_matrix(4, 3, 1.0, rng), c = uniform_matrix(5, 2, 1.0, rng);
  EXPECT_LE(max_abs_diff(matmul_nt(a, b), matmul(a, b.transpose())), 1e-15);
  EXPECT_LE(max_abs_diff(matmul_tn(a, c), matmul(a.transpose(), c)), 1e-15);
}

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  Matrix a(2, 2);
  EXPECT_THROW(a += Matrix(3, 2), ShapeError);
}

TEST(Matrix, NonFiniteProductThrows) {
  EXPECT_THROW(matmul(Matrix{{NAN}}, Matrix{{1.0}}), NumericError);
}

TEST(Kernels, SerialAndParallelGemmAgreeBitwise) {
  Rng rng(5);
  const std::size_t m = 37, k = 29, n = 41;
  const Matrix a = uniform_matrix(m, k, 1.0, rng), b = uniform_matrix(k, n, 1.0, rng), bt = uniform_matrix(n, k, 1.0, rng);
  const Matrix r = uniform_matrix(k, m, 1.0, rng);
  std::vector<double> s(m * n), p(m * n);
  kernels::serial::gemm_nn(m, k, n, a.data(), b.data(), s.data());
  kernels::parallel::gemm_nn(m, k, n, a.data(), b.data(), p.data());
  EXPECT_EQ(s, p);
  kernels::serial::gemm_nt(m, k, n, a.data(), bt.data(), s.data());
  kernels::parallel::gemm_nt(m, k, n, a.data(), bt.data(), p.data());
  EXPECT_EQ(s, p);
  kernels::serial::gemm_tn(k, m, n, r.data(), b.data(), s.data());
  kernels::parallel::gemm_tn(k, m, n, r.data(), b.data(), p.data());
  EXPECT_EQ(s, p);
}

TEST(Kernels, SpikeAccumulationMatchesDenseAndCountsNonzeros) {
  Rng rng(6);
  const std::size_t rows = 9, in = 23, out = 17;
  std::vector<std::int8_t> w(out * in);
  for (auto& x : w) x = static_cast<std::int8_t>(static_cast<int>(rng.index(3)) - 1);
  std::vector<std::uint8_t> spikes(rows * in);
  for (auto& s : spikes) s = rng.coin();
  const auto syn = kernels::make_synapses(out, in, w.data());

  std::vector<std::int32_t> acc_s(rows * out, 0), acc_p(rows * out, 0), dense(rows * out, 0);
  std::uint64_t expected_ops = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < in; ++j) {
      if (!spikes[r * in + j]) continue;
      for (std::size_t k = 0; k < out; ++k) {
        dense[r * out + k] += w[k * in + j];
        expected_ops += w[k * in + j] != 0;
      }
    }
  EXPECT_EQ(kernels::serial::accumulate_spikes(rows, spikes.data(), syn, acc_s.data()), expected_ops);
  EXPECT_EQ(kernels::parallel::accumulate_spikes(rows, spikes.data(), syn, acc_p.data()), expected_ops);
  EXPECT_EQ(acc_s, dense);
  EXPECT_EQ(acc_p, dense);
}

TEST(Kernels, RealSpikeAccumulationSerialParallelAgree) {
  Rng rng(7);
  const std::size_t rows = 6, in = 15, out = 11;
  const Matrix w = uniform_matrix(out, in, 1.0, rng);
  std::vector<std::uint8_t> spikes(rows * in);
  for (auto& s : spikes) s = rng.coin();
  const auto syn = kernels::make_synapses(out, in, w.data());
  std::vector<double> s(rows * out, 0.0), p(rows * out, 0.0);
  EXPECT_EQ(kernels::serial::accumulate_spikes(rows, spikes.data(), syn, s.data()),
            kernels::parallel::accumulate_spikes(rows, spikes.data(), syn, p.data()));
  EXPECT_EQ(s, p);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Matrix p{{0.3, -1.2}};
  AdamState st(p, AdamConfig{});
  for (int i = 0; i < 5; ++i) adam_update(p, Matrix(1, 2), st);
  EXPECT_EQ(p, (Matrix{{0.3, -1.2}}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p{{1.0}};
  AdamState st(p, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  adam_update(p, Matrix{{1.0}}, st);
  // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, IdenticalParamsStayIdentical) {
  Matrix p{{0.5, 0.5}};
  AdamState st(p, AdamConfig{});
  for (int i = 0; i < 10; ++i) adam_update(p, Matrix{{0.2 * i, 0.2 * i}}, st);
  EXPECT_EQ(p[0], p[1]);
}

TEST(Adam, ShapeMismatchThrows) {
  Matrix p(1, 2);
  AdamState st(p, AdamConfig{});
  EXPECT_THROW(adam_update(p, Matrix(2, 1), st), ShapeError);
}

TEST(FiniteDiff, SumHasAllOnesGradient) {
  const Matrix g = finite_difference_grad([](const Matrix& x) { return x.sum(); }, Matrix{{0.3, -2.0, 7.0}}, 1e-4);
  for (double v : g.values()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, SquareAtThree) {
  const Matrix g = finite_difference_grad([](const Matrix& x) { return x[0] * x[0]; }, Matrix{{3.0}}, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantHasZeroGradient) {
  const Matrix g = finite_difference_grad([](const Matrix&) { return 4.2; }, Matrix{{1.0, 2.0}}, 1e-4);
  EXPECT_EQ(g, Matrix(1, 2));
}

TEST(FiniteDiff, QuadraticFormMatchesAnalytic) {
  Rng rng(8);
  const Matrix q = uniform_matrix(4, 4, 1.0, rng);
  const Matrix x0 = uniform_matrix(4, 1, 1.0, rng);
  auto f = [&](const Matrix& x) { return matmul(x.transpose(), matmul(q, x))[0]; };
  const Matrix g = finite_difference_grad(f, x0, 1e-4);
  const Matrix want = matmul(q + q.transpose(), x0);
  EXPECT_LE(max_abs_diff(g, want), 1e-5);
}

TEST(FiniteDiff, NonFiniteValueThrows) {
  EXPECT_THROW(finite_difference_grad([](const Matrix&) { return NAN; }, Matrix{{1.0}}, 1e-4), NumericError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, FanInUniformBound) {
  Rng rng(12);
  const Matrix w = fan_in_uniform(10, 25, rng);
  EXPECT_LE(w.max_abs(), 1.0 / 5.0);
}

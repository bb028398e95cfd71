#include "qspike/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qspike::ops {

double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

Matrix rate(const Matrix& pre, double v_th) {
  Matrix out(pre.rows(), pre.cols());
  const double inv = 1.0 / v_th;
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = clip01(pre[i] * inv);
  return out;
}

double clip01_derivative(double x) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; }

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
}

namespace {

void check_heads(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t num_heads) {
  if (!q.same_shape(k) || k.rows() != v.rows() || q.cols() != v.cols()) {
    throw ShapeError("attention: q " + q.shape_str() + " k " + k.shape_str() + " v " + v.shape_str());
  }
  if (num_heads == 0 || q.cols() % num_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " not divisible into " +
                     std::to_string(num_heads) + " heads");
  }
}

}  // namespace

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t num_heads, AttentionCache* cache) {
  check_heads(q, k, v, num_heads);
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols(), dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(nq, d);
  if (cache) cache->probs.assign(num_heads, Matrix());
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t c0 = h * dh;
    Matrix p(nq, nk);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, c0 + c) * k(j, c0 + c);
        p(i, j) = s * scale;
      }
    softmax_rows_inplace(p);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        const double w = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) out(i, c0 + c) += w * v(j, c0 + c);
      }
    if (cache) cache->probs[h] = std::move(p);
  }
  return out;
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t num_heads,
                        const AttentionCache& cache, const Matrix& grad_out, Matrix* dq, Matrix* dk, Matrix* dv) {
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols(), dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dq) *dq = Matrix(nq, d);
  if (dk) *dk = Matrix(nk, d);
  if (dv) *dv = Matrix(nk, d);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t c0 = h * dh;
    const Matrix& p = cache.probs[h];
    if (dv) {
      for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < nk; ++j) {
          const double w = p(i, j);
          for (std::size_t c = 0; c < dh; ++c) (*dv)(j, c0 + c) += w * grad_out(i, c0 + c);
        }
    }
    if (!dq && !dk) continue;
    // dS = P * (dP - rowsum(dP * P)), dP = dO V^T
    Matrix ds(nq, nk);
    for (std::size_t i = 0; i < nq; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += grad_out(i, c0 + c) * v(j, c0 + c);
        ds(i, j) = s;
        dot += s * p(i, j);
      }
      for (std::size_t j = 0; j < nk; ++j) ds(i, j) = p(i, j) * (ds(i, j) - dot) * scale;
    }
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        const double g = ds(i, j);
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) {
          if (dq) (*dq)(i, c0 + c) += g * k(j, c0 + c);
          if (dk) (*dk)(j, c0 + c) += g * q(i, c0 + c);
        }
      }
  }
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || !gain.same_shape(bias)) {
    throw ShapeError("layer_norm: gain " + gain.shape_str() + " bias " + bias.shape_str() + " for input " +
                     x.shape_str());
  }
  const std::size_t n = x.rows(), d = x.cols();
  Matrix y(n, d);
  if (cache) {
    cache->xhat = Matrix(n, d);
    cache->inv_std.assign(n, 0.0);
  }
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (row[c] - mu) * inv;
      y(r, c) = gain[c] * xh + bias[c];
      if (cache) cache->xhat(r, c) = xh;
    }
    if (cache) cache->inv_std[r] = inv;
  }
  return y;
}

void layer_norm_backward(const Matrix& gain, const LayerNormCache& cache, const Matrix& grad_out, Matrix* dx,
                         Matrix* dgain, Matrix* dbias) {
  const std::size_t n = grad_out.rows(), d = grad_out.cols();
  if (dgain) *dgain = Matrix(1, d);
  if (dbias) *dbias = Matrix(1, d);
  if (dx) *dx = Matrix(n, d);
  std::vector<double> dxh(d);
  for (std::size_t r = 0; r < n; ++r) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = grad_out(r, c);
      const double xh = cache.xhat(r, c);
      if (dgain) (*dgain)[c] += g * xh;
      if (dbias) (*dbias)[c] += g;
      dxh[c] = g * gain[c];
      m1 += dxh[c];
      m2 += dxh[c] * xh;
    }
    if (!dx) continue;
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    const double inv = cache.inv_std[r];
    for (std::size_t c = 0; c < d; ++c) (*dx)(r, c) = inv * (dxh[c] - m1 - cache.xhat(r, c) * m2);
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void add_row_inplace(Matrix& m, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_row: " + row.shape_str() + " onto " + m.shape_str());
  }
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += row[c];
}

Matrix mean_rows(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  if (m.rows() > 0) out *= 1.0 / static_cast<double>(m.rows());
  return out;
}

double cross_entropy(const Matrix& logits, std::size_t label) {
  if (logits.rows() != 1 || label >= logits.cols()) throw ShapeError("cross_entropy: bad logits/label");
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - mx);
  return std::log(z) + mx - logits[label];
}

}  // namespace qspike::ops

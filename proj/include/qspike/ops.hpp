#pragma once

// Plain (non-differentiated) sublayer math shared by the steady-state map,
// the temporal simulator, and the teacher. The tape in autodiff.hpp wraps
// these same functions so every path evaluates identical arithmetic.

#include <cstddef>
#include <vector>

#include "qspike/matrix.hpp"

namespace qspike::ops {

/// Clipping nonlinearity: bounds x / v_th to [0, 1].
double clip01(double x);
Matrix rate(const Matrix& pre, double v_th);

/// Subgradient of clip01: 1 on the closed interval [0, 1], 0 outside.
double clip01_derivative(double x);

void softmax_rows_inplace(Matrix& m);

struct AttentionCache {
  std::vector<Matrix> probs;  // one n x n matrix per head
};

/// Multi-head scaled dot-product attention on nonnegative rates:
/// per head softmax(Q_h K_h^T / sqrt(d_head)) V_h, heads concatenated.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t num_heads,
                 AttentionCache* cache = nullptr);

/// Backward of attention given the cached probabilities.
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t num_heads,
                        const AttentionCache& cache, const Matrix& grad_out, Matrix* dq, Matrix* dk,
                        Matrix* dv);

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization over the feature dimension followed by gain/bias
/// (both 1 x cols).
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache = nullptr);

void layer_norm_backward(const Matrix& gain, const LayerNormCache& cache, const Matrix& grad_out, Matrix* dx,
                         Matrix* dgain, Matrix* dbias);

double gelu(double x);
double gelu_derivative(double x);

/// Adds a 1 x cols row vector to every row.
void add_row_inplace(Matrix& m, const Matrix& row);

/// 1 x cols mean over rows.
Matrix mean_rows(const Matrix& m);

/// Softmax cross-entropy of a 1 x C logit row against `label`.
double cross_entropy(const Matrix& logits, std::size_t label);

}  // namespace qspike::ops

#pragma once

// Minimal reverse-mode tape over Matrix values. Values are computed eagerly
// when an op is recorded; backward() can be run any number of times with
// different seeds, which is what the adjoint (Neumann) iteration needs.
//
// Leaves are either state (the equilibrium rates the fixed-point map reads)
// or parameters. A StateOnly pass propagates only along nodes that depend on
// state leaves, so repeated vector-Jacobian products never touch parameter
// gradients; a Full pass also accumulates parameter gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qspike/matrix.hpp"
#include "qspike/ops.hpp"

namespace qspike::ad {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class Pass { StateOnly, Full };

struct Seed {
  Var var;
  const Matrix* grad;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& grad_out)>;

  Var constant(Matrix value);
  /// Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Matrix& value);
  Var state(Matrix value);
  /// Non-owning parameter leaf; `value` must outlive the tape.
  Var param(const Matrix& value);

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Zeroes all gradients, seeds the given outputs and sweeps in reverse.
  void backward(std::span<const Seed> seeds, Pass pass);
  void backward(Var out, const Matrix& seed, Pass pass);

  /// Gradient from the last backward(); zeros of the right shape when the
  /// node received nothing.
  Matrix grad(Var v) const;

  // Used by op implementations.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop backprop);
  bool wants(Var v) const;
  Matrix& grad_slot(Var v);

 private:
  struct Node {
    Matrix owned;
    const Matrix* ext = nullptr;
    bool dep_state = false;
    bool dep_param = false;
    bool live = false;
    Matrix grad;
    Backprop backprop;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  Pass pass_ = Pass::Full;
};

Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// a + s (elementwise constant shift).
Var shift(Tape& t, Var a, double s);
/// x W^T with W stored out x in.
Var linear(Tape& t, Var x, Var w);
/// x W.
Var matmul(Tape& t, Var x, Var w);
/// Adds a 1 x cols row to every row.
Var add_row(Tape& t, Var x, Var row);
/// clip01(x / v_th), with the [0,1]-inclusive subgradient.
Var rate(Tape& t, Var x, double v_th);
Var attention(Tape& t, Var q, Var k, Var v, std::size_t num_heads);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
Var gelu(Tape& t, Var x);
Var mean_rows(Tape& t, Var x);
/// Rows table[ids[i]] of an embedding table.
Var gather_rows(Tape& t, Var table, std::vector<std::size_t> ids);
/// First n rows of a table (positional embeddings).
Var head_rows(Tape& t, Var table, std::size_t n);
/// 1x1 softmax cross-entropy against a class index.
Var cross_entropy(Tape& t, Var logits, std::size_t label);
/// 1x1 mean squared difference.
Var mse(Tape& t, Var a, Var b);

}  // namespace qspike::ad

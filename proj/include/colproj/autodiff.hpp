#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars. backward() walks the
// record in exact reverse order and accumulates gradients additively, so a
// value consumed by several operations receives the sum of all
// contributions. Tapes are single-thread objects; use one per worker.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "colproj/matrix.hpp"

namespace colproj::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
};

/// Result of Tape::backward. Every recorded value has an entry; values the
/// loss does not depend on get an exact zero matrix.
class Gradients {
 public:
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}
  const Matrix& operator[](Var v) const { return grads_.at(v.id); }

 private:
  std::vector<Matrix> grads_;
};

class Tape {
 public:
  /// Receives parent-gradient contributions during the reverse pass.
  class Accumulator {
   public:
    explicit Accumulator(std::vector<Matrix>& grads, const Tape& tape)
        : grads_(grads), tape_(tape) {}
    bool wants(std::size_t id) const;
    void add(std::size_t id, const Matrix& contribution);

   private:
    std::vector<Matrix>& grads_;
    const Tape& tape_;
  };

  using BackwardFn = std::function<void(const Matrix& grad_out, Accumulator& acc)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameter or embedding).
  Var leaf(Matrix value);
  /// A value that never receives gradient.
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a 1×1 loss. Throws ContractError for non-scalar loss.
  Gradients backward(Var loss) const;

  /// Low-level hook used by the operations below.
  Var record(Matrix value, std::span<const Var> parents, BackwardFn backward);

 private:
  struct Node {
    Matrix value;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var scale(Var a, double s);
/// Multiplies every entry of `a` by the 1×1 value `s`.
Var scale_by(Var a, Var s);
Var elementwise_mul(Var a, Var b);
Var apply_activation(Var x, Activation kind);
Var add_row_bias(Var x, Var bias);
Var row_l2_normalize(Var x, double eps = 1e-12);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// m×n → m×1 of row maxima; ties resolve to the lowest column, which also
/// receives the full gradient.
Var row_max(Var x);
/// Sum of all entries, as 1×1.
Var sum(Var x);
/// Concatenates 1×1 values into a 1×n row.
Var concat_scalars(std::span<const Var> scalars);
/// Row-wise log-softmax of a 1×n row.
Var log_softmax(Var x);
/// Elementwise eˣ.
Var exp(Var x);

}  // namespace colproj::ad

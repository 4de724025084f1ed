#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cral/tensor.hpp"

namespace cral {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  MatMulTransposedB,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRowVector,
  Relu,
  Exp,
  Log,
  Abs,
  ClampMin,
  MinScalar,
  Sum,
  SumAxis,
  SoftmaxRows,
  ConcatCols,
  StopGradient,
};

const char* op_name(Op op);

/// Gradients produced by one backward pass, indexed by node.
class Gradients {
 public:
  /// Gradient of the loss with respect to `v`. Nodes the loss does not
  /// depend on (or that were recorded as constants) yield zeros.
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  mutable std::vector<Tensor> grads_;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so every node's inputs precede it. A tape supports exactly one backward
/// pass; a second call throws ContractError. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that owns its value.
  Var variable(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return variable(std::move(value), false); }

  /// Leaf that references an external tensor without copying it. The
  /// referenced tensor must outlive the tape and stay unmodified meanwhile.
  Var reference(const Tensor& value, bool requires_grad);

  Gradients backward(Var loss);
  bool consumed() const noexcept { return consumed_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id()).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  const Tensor& value(std::size_t id) const;

  /// One byte per element fed into a non-smooth op (relu, abs, clamp_min,
  /// min_scalar) recording which side of the kink it landed on. Two
  /// evaluations with equal signatures lie on the same smooth piece.
  std::vector<std::uint8_t> kink_signature() const;

  // Recording interface used by the op functions below.
  Var record(Op op, Tensor value, std::initializer_list<Var> inputs, double scalar = 0.0, int axis = -1);

 private:
  struct Node {
    Op op = Op::Leaf;
    std::size_t inputs[2] = {0, 0};
    std::uint8_t input_count = 0;
    bool requires_grad = false;
    double scalar = 0.0;
    int axis = -1;
    Tensor owned;
    const Tensor* ref = nullptr;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  void accumulate(std::vector<Tensor>& grads, std::size_t id, const Tensor& g) const;
  void propagate(std::vector<Tensor>& grads, std::size_t id) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// --- operations ----------------------------------------------------------
// Binary elementwise ops accept equal shapes or a single-element operand on
// either side.

Var matmul(Var a, Var b);
/// a · bᵀ for a[m×k], b[n×k]; the layout of a weight matrix stored [out×in].
Var matmul_transposed_b(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// m[n×k] + v[k] broadcast over rows.
Var add_row_vector(Var m, Var v);

Var relu(Var a);
Var exp(Var a);
/// Natural log; throws ContractError on non-positive input. NaN propagates.
Var log(Var a);
Var abs(Var a);
Var clamp_min(Var a, double floor);
/// Elementwise min(a, ceiling); gradient 0 where the ceiling is active.
Var min_scalar(Var a, double ceiling);

/// Full reduction when axis is empty; axis 0 sums rows into a [cols]
/// vector, axis 1 sums columns into a [rows] vector.
Var sum(Var a, std::optional<int> axis = std::nullopt);
Var mean(Var a, std::optional<int> axis = std::nullopt);
Var l1_norm(Var a, std::optional<int> axis = std::nullopt);
Var l2_norm_sq(Var a, std::optional<int> axis = std::nullopt);

/// Row softmax with max subtraction.
Var softmax_rows(Var logits);
Var concat_cols(Var a, Var b);
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace cral

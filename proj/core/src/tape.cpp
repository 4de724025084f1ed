#include "cral/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cral/errors.hpp"

namespace cral {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::MatMulTransposedB: return "matmul_transposed_b";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::AddRowVector: return "add_row_vector";
    case Op::Relu: return "relu";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::ClampMin: return "clamp_min";
    case Op::MinScalar: return "min_scalar";
    case Op::Sum: return "sum";
    case Op::SumAxis: return "sum_axis";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.tape() != tape_) throw ContractError("gradient query for a Var from another tape");
  Tensor& g = grads_.at(v.id());
  if (g.empty()) g = Tensor(v.shape());
  return g;
}

// --- kernels -------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + to_string(t.shape()));
}

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = B + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      C[i * n + j] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      double* cp = C + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.size() == 1) return b.shape();
  if (b.size() == 1) return a.shape();
  throw DimensionError(std::string(what) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape);
  const std::size_t n = out.size();
  const bool sa = a.size() == 1 && n != 1;
  const bool sb = b.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[sa ? 0 : i], b[sb ? 0 : i]);
  return out;
}

template <typename F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Sum `g` down to `target` when the operand was broadcast from one element.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  double s = 0.0;
  for (double v : g.data()) s += v;
  return Tensor(target, s);
}

Tape* tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an unbound Var");
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

Tape* tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return a.tape();
}

}  // namespace

// --- tape ----------------------------------------------------------------

Var Tape::variable(Tensor value, bool requires_grad) {
  if (value.empty()) throw DimensionError("tape leaf with empty tensor");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::reference(const Tensor& value, bool requires_grad) {
  if (value.empty()) throw DimensionError("tape leaf with empty tensor");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

Var Tape::record(Op op, Tensor value, std::initializer_list<Var> inputs, double scalar, int axis) {
  Node n;
  n.op = op;
  n.scalar = scalar;
  n.axis = axis;
  n.owned = std::move(value);
  for (Var v : inputs) {
    if (v.tape() != this) throw ContractError("input recorded on a different tape");
    n.inputs[n.input_count++] = v.id();
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (op == Op::StopGradient) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<std::uint8_t> Tape::kink_signature() const {
  std::vector<std::uint8_t> sig;
  for (const auto& n : nodes_) {
    if (n.op != Op::Relu && n.op != Op::Abs && n.op != Op::ClampMin && n.op != Op::MinScalar) continue;
    const Tensor& x = nodes_[n.inputs[0]].value();
    for (double v : x.data()) {
      switch (n.op) {
        case Op::Relu: sig.push_back(v > 0.0); break;
        case Op::Abs: sig.push_back(v > 0.0 ? 2 : (v < 0.0 ? 0 : 1)); break;
        case Op::ClampMin: sig.push_back(v > n.scalar); break;
        default: sig.push_back(v < n.scalar); break;
      }
    }
  }
  return sig;
}

void Tape::accumulate(std::vector<Tensor>& grads, std::size_t id, const Tensor& g) const {
  if (!nodes_[id].requires_grad) return;
  Tensor& dst = grads[id];
  const Shape& target = nodes_[id].value().shape();
  if (dst.empty()) {
    dst = reduce_to(g, target);
    return;
  }
  if (g.shape() == target) {
    auto d = dst.data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  } else {
    dst[0] += reduce_to(g, target)[0];
  }
}

Gradients Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (consumed_) throw ContractError("backward: tape already consumed; record a new tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  consumed_ = true;

  std::vector<Tensor> grads(nodes_.size());
  if (nodes_[loss.id()].requires_grad) grads[loss.id()] = Tensor(loss.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (grads[id].empty() || nodes_[id].op == Op::Leaf) continue;
    propagate(grads, id);
    // Interior gradients are not part of the result; free them early.
    grads[id] = Tensor();
  }

  Gradients out;
  out.tape_ = this;
  out.grads_ = std::move(grads);
  return out;
}

void Tape::propagate(std::vector<Tensor>& grads, std::size_t id) const {
  const Node& n = nodes_[id];
  const Tensor& g = grads[id];
  const Tensor& y = n.value();
  const std::size_t ia = n.inputs[0];
  const std::size_t ib = n.inputs[1];
  const Tensor& a = nodes_[ia].value();
  auto needs = [&](std::size_t i) { return nodes_[i].requires_grad; };

  switch (n.op) {
    case Op::Leaf:
    case Op::StopGradient:
      return;
    case Op::MatMul: {
      const Tensor& b = nodes_[ib].value();
      if (needs(ia)) {
        Tensor da(a.shape());
        gemm_nt(g, b, da);
        accumulate(grads, ia, da);
      }
      if (needs(ib)) {
        Tensor db(b.shape());
        gemm_tn(a, g, db);
        accumulate(grads, ib, db);
      }
      return;
    }
    case Op::MatMulTransposedB: {
      const Tensor& b = nodes_[ib].value();
      if (needs(ia)) {
        Tensor da(a.shape());
        gemm_nn(g, b, da);
        accumulate(grads, ia, da);
      }
      if (needs(ib)) {
        Tensor db(b.shape());
        gemm_tn(g, a, db);
        accumulate(grads, ib, db);
      }
      return;
    }
    case Op::Add:
      accumulate(grads, ia, g);
      accumulate(grads, ib, g);
      return;
    case Op::Sub:
      accumulate(grads, ia, g);
      if (needs(ib)) accumulate(grads, ib, unary_map(g, [](double v) { return -v; }));
      return;
    case Op::Mul: {
      const Tensor& b = nodes_[ib].value();
      if (needs(ia)) accumulate(grads, ia, binary_map(g, b, g.shape(), [](double gv, double bv) { return gv * bv; }));
      if (needs(ib)) accumulate(grads, ib, binary_map(g, a, g.shape(), [](double gv, double av) { return gv * av; }));
      return;
    }
    case Op::Scale: {
      const double s = n.scalar;
      accumulate(grads, ia, unary_map(g, [s](double v) { return v * s; }));
      return;
    }
    case Op::AddScalar:
      accumulate(grads, ia, g);
      return;
    case Op::AddRowVector: {
      accumulate(grads, ia, g);
      if (needs(ib)) {
        const Tensor& v = nodes_[ib].value();
        Tensor dv(v.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) dv[c] += row[c];
        }
        accumulate(grads, ib, dv);
      }
      return;
    }
    case Op::Relu:
      accumulate(grads, ia, binary_map(g, a, g.shape(), [](double gv, double x) { return x > 0.0 ? gv : 0.0; }));
      return;
    case Op::Exp:
      accumulate(grads, ia, binary_map(g, y, g.shape(), [](double gv, double yv) { return gv * yv; }));
      return;
    case Op::Log:
      accumulate(grads, ia, binary_map(g, a, g.shape(), [](double gv, double x) { return gv / x; }));
      return;
    case Op::Abs:
      accumulate(grads, ia, binary_map(g, a, g.shape(), [](double gv, double x) {
                   return x > 0.0 ? gv : (x < 0.0 ? -gv : 0.0);
                 }));
      return;
    case Op::ClampMin: {
      const double lo = n.scalar;
      accumulate(grads, ia, binary_map(g, a, g.shape(), [lo](double gv, double x) { return x > lo ? gv : 0.0; }));
      return;
    }
    case Op::MinScalar: {
      const double hi = n.scalar;
      accumulate(grads, ia, binary_map(g, a, g.shape(), [hi](double gv, double x) { return x < hi ? gv : 0.0; }));
      return;
    }
    case Op::Sum:
      accumulate(grads, ia, Tensor(a.shape(), g.item()));
      return;
    case Op::SumAxis: {
      Tensor da(a.shape());
      const std::size_t rows = a.rows(), cols = a.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] = n.axis == 0 ? g[a.rank() == 1 ? 0 : c] : g[r];
      accumulate(grads, ia, da);
      return;
    }
    case Op::SoftmaxRows: {
      Tensor da(a.shape());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
        auto dr = da.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) dr[c] = yr[c] * (gr[c] - dot);
      }
      accumulate(grads, ia, da);
      return;
    }
    case Op::ConcatCols: {
      const Tensor& b = nodes_[ib].value();
      const std::size_t ca = a.cols(), cb = b.cols();
      if (needs(ia)) {
        Tensor da(a.shape());
        for (std::size_t r = 0; r < a.rows(); ++r) std::copy_n(g.row(r).begin(), ca, da.row(r).begin());
        accumulate(grads, ia, da);
      }
      if (needs(ib)) {
        Tensor db(b.shape());
        for (std::size_t r = 0; r < b.rows(); ++r) std::copy_n(g.row(r).begin() + ca, cb, db.row(r).begin());
        accumulate(grads, ib, db);
      }
      return;
    }
  }
}

// --- operations ----------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(A.shape()) + " and " +
                         to_string(B.shape()));
  }
  Tensor out({A.rows(), B.cols()});
  gemm_nn(A, B, out);
  return t->record(Op::MatMul, std::move(out), {a, b});
}

Var matmul_transposed_b(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul_transposed_b");
  require_matrix(B, "matmul_transposed_b");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_transposed_b: inner dimensions disagree for " + to_string(A.shape()) + " and " +
                         to_string(B.shape()) + "ᵀ");
  }
  Tensor out({A.rows(), B.rows()});
  gemm_nt(A, B, out);
  return t->record(Op::MatMulTransposedB, std::move(out), {a, b});
}

Var add(Var a, Var b) {
  Tape* t = tape_of(a, b);
  auto shape = broadcast_shape(a.value(), b.value(), "add");
  return t->record(Op::Add, binary_map(a.value(), b.value(), shape, std::plus<>{}), {a, b});
}

Var sub(Var a, Var b) {
  Tape* t = tape_of(a, b);
  auto shape = broadcast_shape(a.value(), b.value(), "sub");
  return t->record(Op::Sub, binary_map(a.value(), b.value(), shape, std::minus<>{}), {a, b});
}

Var mul(Var a, Var b) {
  Tape* t = tape_of(a, b);
  auto shape = broadcast_shape(a.value(), b.value(), "mul");
  return t->record(Op::Mul, binary_map(a.value(), b.value(), shape, std::multiplies<>{}), {a, b});
}

Var scale(Var a, double factor) {
  Tape* t = tape_of(a);
  return t->record(Op::Scale, unary_map(a.value(), [factor](double v) { return v * factor; }), {a}, factor);
}

Var add_scalar(Var a, double offset) {
  Tape* t = tape_of(a);
  return t->record(Op::AddScalar, unary_map(a.value(), [offset](double v) { return v + offset; }), {a}, offset);
}

Var add_row_vector(Var m, Var v) {
  Tape* t = tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  require_matrix(M, "add_row_vector");
  if (V.size() != M.cols()) {
    throw DimensionError("add_row_vector: " + to_string(M.shape()) + " and " + to_string(V.shape()));
  }
  Tensor out = M;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += V[c];
  }
  return t->record(Op::AddRowVector, std::move(out), {m, v});
}

Var relu(Var a) {
  return tape_of(a)->record(Op::Relu, unary_map(a.value(), [](double v) { return v < 0.0 ? 0.0 : v; }), {a});
}

Var exp(Var a) {
  return tape_of(a)->record(Op::Exp, unary_map(a.value(), [](double v) { return std::exp(v); }), {a});
}

Var log(Var a) {
  Tape* t = tape_of(a);
  for (double v : a.value().data()) {
    if (v <= 0.0) throw ContractError("log of non-positive value " + std::to_string(v) + "; clamp first");
  }
  return t->record(Op::Log, unary_map(a.value(), [](double v) { return std::log(v); }), {a});
}

Var abs(Var a) {
  return tape_of(a)->record(Op::Abs, unary_map(a.value(), [](double v) { return std::abs(v); }), {a});
}

Var clamp_min(Var a, double floor) {
  return tape_of(a)->record(Op::ClampMin, unary_map(a.value(), [floor](double v) { return std::max(v, floor); }),
                            {a}, floor);
}

Var min_scalar(Var a, double ceiling) {
  return tape_of(a)->record(Op::MinScalar,
                            unary_map(a.value(), [ceiling](double v) { return std::min(v, ceiling); }), {a}, ceiling);
}

Var sum(Var a, std::optional<int> axis) {
  Tape* t = tape_of(a);
  const Tensor& A = a.value();
  if (!axis) {
    double s = 0.0;
    for (double v : A.data()) s += v;
    return t->record(Op::Sum, Tensor::scalar(s), {a});
  }
  const int ax = *axis;
  if (ax < 0 || ax >= static_cast<int>(A.rank())) {
    throw DimensionError("sum: axis " + std::to_string(ax) + " invalid for shape " + to_string(A.shape()));
  }
  const std::size_t rows = A.rows(), cols = A.cols();
  if (A.rank() == 1) {
    double s = 0.0;
    for (double v : A.data()) s += v;
    return t->record(Op::SumAxis, Tensor::scalar(s), {a}, 0.0, 0);
  }
  Tensor out(Shape{ax == 0 ? cols : rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[ax == 0 ? c : r] += A[r * cols + c];
  return t->record(Op::SumAxis, std::move(out), {a}, 0.0, ax);
}

Var mean(Var a, std::optional<int> axis) {
  const Tensor& A = a.value();
  Var s = sum(a, axis);
  const double count = static_cast<double>(A.size()) / static_cast<double>(s.value().size());
  return scale(s, 1.0 / count);
}

Var l1_norm(Var a, std::optional<int> axis) { return sum(abs(a), axis); }

Var l2_norm_sq(Var a, std::optional<int> axis) { return sum(mul(a, a), axis); }

Var softmax_rows(Var logits) {
  Tape* t = tape_of(logits);
  const Tensor& X = logits.value();
  Tensor out(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto xr = X.row(r);
    auto yr = out.row(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t c = 0; c < xr.size(); ++c) z += (yr[c] = std::exp(xr[c] - mx));
    for (double& v : yr) v /= z;
  }
  return t->record(Op::SoftmaxRows, std::move(out), {logits});
}

Var concat_cols(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "concat_cols");
  require_matrix(B, "concat_cols");
  if (A.rows() != B.rows()) {
    throw DimensionError("concat_cols: row counts differ for " + to_string(A.shape()) + " and " +
                         to_string(B.shape()));
  }
  Tensor out({A.rows(), A.cols() + B.cols()});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(A.row(r).begin(), A.row(r).end(), dst.begin());
    std::copy(B.row(r).begin(), B.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(A.cols()));
  }
  return t->record(Op::ConcatCols, std::move(out), {a, b});
}

Var stop_gradient(Var a) {
  Tape* t = tape_of(a);
  return t->record(Op::StopGradient, a.value(), {a});
}

}  // namespace cral

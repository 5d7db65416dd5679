#include "wflow/tape.hpp"

#include <string>

#include "wflow/errors.hpp"

namespace wflow {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::matmul: return "matmul";
    case Op::affine: return "affine";
    case Op::linear: return "linear";
    case Op::tanh: return "tanh";
    case Op::softplus: return "softplus";
    case Op::sigmoid: return "sigmoid";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::square: return "square";
    case Op::sum: return "sum";
    case Op::row_sum: return "row_sum";
    case Op::mean: return "mean";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
  }
  return "?";
}

namespace {

int arity(Op op) {
  switch (op) {
    case Op::leaf: return 0;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::matmul:
    case Op::linear:
    case Op::concat: return 2;
    case Op::affine: return 3;
    default: return 1;
  }
}

void accumulate(Tensor& slot, const Tensor& delta) {
  if (slot.empty()) {
    slot = delta;
    return;
  }
  slot.matrix() += delta.matrix();
}

}  // namespace

Var Tape::parameter(Tensor value) {
  Var v = leaf(std::move(value), true);
  slots_.push_back(v.id);
  return v;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (value.rank() != 2) throw ShapeError("tape leaves must be rank-2, got " + value.shape_string());
  require_finite(value, "leaf");
  Node n;
  n.op = Op::leaf;
  n.needs_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::evaluate(const Node& n) const {
  const Tensor& a = nodes_[n.in[0]].value;
  switch (n.op) {
    case Op::leaf: return n.value;
    case Op::add: return wflow::add(a, nodes_[n.in[1]].value);
    case Op::sub: return wflow::sub(a, nodes_[n.in[1]].value);
    case Op::mul: return wflow::mul(a, nodes_[n.in[1]].value);
    case Op::scale: return wflow::scale(a, n.scalar);
    case Op::add_scalar: return wflow::add_scalar(a, n.scalar);
    case Op::matmul: return wflow::matmul(a, nodes_[n.in[1]].value);
    case Op::affine: return wflow::affine(a, nodes_[n.in[1]].value, nodes_[n.in[2]].value);
    case Op::linear: return wflow::linear(a, nodes_[n.in[1]].value);
    case Op::tanh: return wflow::tanh(a);
    case Op::softplus: return wflow::softplus(a);
    case Op::sigmoid: return wflow::sigmoid(a);
    case Op::exp: return wflow::exp(a);
    case Op::log: return wflow::log(a);
    case Op::square: return wflow::square(a);
    case Op::sum: return wflow::sum(a);
    case Op::row_sum: return wflow::row_sum(a);
    case Op::mean: return wflow::mean(a);
    case Op::concat: return wflow::concat(a, nodes_[n.in[1]].value);
    case Op::slice: return wflow::slice(a, n.start, n.count);
  }
  throw std::logic_error("unknown op");
}

Var Tape::record(Op op, std::uint32_t a, std::uint32_t b, std::uint32_t c, double scalar, std::size_t start,
                 std::size_t count) {
  Node n;
  n.op = op;
  n.in[0] = a;
  n.in[1] = b;
  n.in[2] = c;
  n.scalar = scalar;
  n.start = start;
  n.count = count;
  const int k = arity(op);
  for (int i = 0; i < k; ++i) {
    if (n.in[i] >= nodes_.size()) throw std::out_of_range("tape input refers to a future node");
    n.needs_grad = n.needs_grad || nodes_[n.in[i]].needs_grad;
  }
  const std::size_t index = nodes_.size();
  try {
    n.value = evaluate(n);
  } catch (const ShapeError& e) {
    throw ShapeError("primitive #" + std::to_string(index) + " (" + std::string(op_name(op)) + "): " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("primitive #" + std::to_string(index) + " (" + std::string(op_name(op)) +
                       "): " + e.what());
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(index)};
}

std::vector<Var> Tape::leaves() const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::leaf) out.push_back(Var{const_cast<Tape*>(this), static_cast<std::uint32_t>(i)});
  }
  return out;
}

void Tape::replay(std::span<const Tensor> leaf_values) {
  std::size_t next = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::leaf) {
      if (next >= leaf_values.size()) throw ShapeError("replay: too few leaf values");
      if (!leaf_values[next].same_shape(n.value)) {
        throw ShapeError("replay: leaf #" + std::to_string(next) + " shape mismatch");
      }
      n.value = leaf_values[next++];
    } else {
      n.value = evaluate(n);
    }
  }
  if (next != leaf_values.size()) throw ShapeError("replay: too many leaf values");
}

std::vector<Tensor> Tape::sweep(Var output, const Tensor& seed) const {
  if (output.tape != this) throw std::invalid_argument("grad: variable belongs to another tape");
  const Tensor& out_value = nodes_[output.id].value;
  if (!seed.same_shape(out_value)) {
    throw ShapeError("grad: seed shape " + seed.shape_string() + " does not match output " +
                     out_value.shape_string());
  }
  std::vector<Tensor> adj(output.id + 1);
  adj[output.id] = seed;

  for (std::size_t idx = output.id + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (n.op == Op::leaf || !n.needs_grad || adj[idx].empty()) continue;
    const Tensor& g = adj[idx];
    auto want = [&](int k) { return nodes_[n.in[k]].needs_grad; };
    auto in_value = [&](int k) -> const Tensor& { return nodes_[n.in[k]].value; };
    auto push = [&](int k, const Tensor& delta) { accumulate(adj[n.in[k]], delta); };

    switch (n.op) {
      case Op::leaf: break;
      case Op::add:
        if (want(0)) push(0, g);
        if (want(1)) push(1, g);
        break;
      case Op::sub:
        if (want(0)) push(0, g);
        if (want(1)) {
          Tensor d = g;
          d.matrix() *= -1.0;
          push(1, d);
        }
        break;
      case Op::mul:
        if (want(0)) {
          Tensor d = g;
          d.matrix().array() *= in_value(1).matrix().array();
          push(0, d);
        }
        if (want(1)) {
          Tensor d = g;
          d.matrix().array() *= in_value(0).matrix().array();
          push(1, d);
        }
        break;
      case Op::scale: {
        Tensor d = g;
        d.matrix() *= n.scalar;
        push(0, d);
        break;
      }
      case Op::add_scalar: push(0, g); break;
      case Op::matmul: {
        const Tensor& a = in_value(0);
        const Tensor& b = in_value(1);
        if (want(0)) {
          Tensor d = Tensor::zeros(a.rows(), a.cols());
          d.matrix().noalias() = g.matrix() * b.matrix().transpose();
          push(0, d);
        }
        if (want(1)) {
          Tensor d = Tensor::zeros(b.rows(), b.cols());
          d.matrix().noalias() = a.matrix().transpose() * g.matrix();
          push(1, d);
        }
        break;
      }
      case Op::affine:
      case Op::linear: {
        const Tensor& x = in_value(0);
        const Tensor& w = in_value(1);
        if (want(0)) {
          Tensor d = Tensor::zeros(x.rows(), x.cols());
          d.matrix().noalias() = g.matrix() * w.matrix();
          push(0, d);
        }
        if (want(1)) {
          Tensor d = Tensor::zeros(w.rows(), w.cols());
          d.matrix().noalias() = g.matrix().transpose() * x.matrix();
          push(1, d);
        }
        if (n.op == Op::affine && want(2)) {
          Tensor d = Tensor::zeros(1, w.rows());
          d.matrix() = g.matrix().colwise().sum();
          push(2, d);
        }
        break;
      }
      case Op::tanh: {
        Tensor d = g;
        d.matrix().array() *= 1.0 - n.value.matrix().array().square();
        push(0, d);
        break;
      }
      case Op::softplus: {
        Tensor d = g;
        d.matrix().array() *= wflow::sigmoid(in_value(0)).matrix().array();
        push(0, d);
        break;
      }
      case Op::sigmoid: {
        Tensor d = g;
        d.matrix().array() *= n.value.matrix().array() * (1.0 - n.value.matrix().array());
        push(0, d);
        break;
      }
      case Op::exp: {
        Tensor d = g;
        d.matrix().array() *= n.value.matrix().array();
        push(0, d);
        break;
      }
      case Op::log: {
        Tensor d = g;
        d.matrix().array() /= in_value(0).matrix().array();
        push(0, d);
        break;
      }
      case Op::square: {
        Tensor d = g;
        d.matrix().array() *= 2.0 * in_value(0).matrix().array();
        push(0, d);
        break;
      }
      case Op::sum: {
        const Tensor& a = in_value(0);
        push(0, Tensor::filled(a.rows(), a.cols(), g.item()));
        break;
      }
      case Op::row_sum: {
        const Tensor& a = in_value(0);
        Tensor d = Tensor::zeros(a.rows(), a.cols());
        d.matrix().colwise() = g.matrix().col(0);
        push(0, d);
        break;
      }
      case Op::mean: {
        const Tensor& a = in_value(0);
        push(0, Tensor::filled(a.rows(), a.cols(), g.item() / static_cast<double>(a.size())));
        break;
      }
      case Op::concat: {
        const auto ca = static_cast<Eigen::Index>(in_value(0).cols());
        const auto cb = static_cast<Eigen::Index>(in_value(1).cols());
        if (want(0)) {
          Tensor d = Tensor::zeros(g.rows(), static_cast<std::size_t>(ca));
          d.matrix() = g.matrix().leftCols(ca);
          push(0, d);
        }
        if (want(1)) {
          Tensor d = Tensor::zeros(g.rows(), static_cast<std::size_t>(cb));
          d.matrix() = g.matrix().rightCols(cb);
          push(1, d);
        }
        break;
      }
      case Op::slice: {
        const Tensor& a = in_value(0);
        Tensor d = Tensor::zeros(a.rows(), a.cols());
        d.matrix().middleCols(static_cast<Eigen::Index>(n.start), static_cast<Eigen::Index>(n.count)) =
            g.matrix();
        push(0, d);
        break;
      }
    }
  }
  return adj;
}

std::vector<Tensor> Tape::grad(Var output, const Tensor& seed) const {
  std::vector<Tensor> adj = sweep(output, seed);
  std::vector<Tensor> out;
  out.reserve(slots_.size());
  for (std::uint32_t id : slots_) {
    if (id < adj.size() && !adj[id].empty()) {
      out.push_back(std::move(adj[id]));
    } else {
      const Tensor& v = nodes_[id].value;
      out.push_back(Tensor::zeros(v.rows(), v.cols()));
    }
  }
  return out;
}

Tensor Tape::grad_wrt(Var output, Var wrt, const Tensor& seed) const {
  if (!nodes_[wrt.id].needs_grad) throw std::invalid_argument("grad_wrt: node does not require grad");
  std::vector<Tensor> adj = sweep(output, seed);
  if (wrt.id < adj.size() && !adj[wrt.id].empty()) return std::move(adj[wrt.id]);
  const Tensor& v = nodes_[wrt.id].value;
  return Tensor::zeros(v.rows(), v.cols());
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace

Var add(Var a, Var b) { return same_tape(a, b).record(Op::add, a.id, b.id); }
Var sub(Var a, Var b) { return same_tape(a, b).record(Op::sub, a.id, b.id); }
Var mul(Var a, Var b) { return same_tape(a, b).record(Op::mul, a.id, b.id); }
Var scale(Var a, double c) { return a.tape->record(Op::scale, a.id, 0, 0, c); }
Var add_scalar(Var a, double c) { return a.tape->record(Op::add_scalar, a.id, 0, 0, c); }
Var matmul(Var a, Var b) { return same_tape(a, b).record(Op::matmul, a.id, b.id); }
Var affine(Var x, Var w, Var b) {
  same_tape(x, w);
  return same_tape(w, b).record(Op::affine, x.id, w.id, b.id);
}
Var linear(Var x, Var w) { return same_tape(x, w).record(Op::linear, x.id, w.id); }
Var tanh(Var a) { return a.tape->record(Op::tanh, a.id); }
Var softplus(Var a) { return a.tape->record(Op::softplus, a.id); }
Var sigmoid(Var a) { return a.tape->record(Op::sigmoid, a.id); }
Var exp(Var a) { return a.tape->record(Op::exp, a.id); }
Var log(Var a) { return a.tape->record(Op::log, a.id); }
Var square(Var a) { return a.tape->record(Op::square, a.id); }
Var sum(Var a) { return a.tape->record(Op::sum, a.id); }
Var row_sum(Var a) { return a.tape->record(Op::row_sum, a.id); }
Var mean(Var a) { return a.tape->record(Op::mean, a.id); }
Var concat(Var a, Var b) { return same_tape(a, b).record(Op::concat, a.id, b.id); }
Var slice(Var a, std::size_t start, std::size_t count) {
  return a.tape->record(Op::slice, a.id, 0, 0, 0.0, start, count);
}

}  // namespace wflow

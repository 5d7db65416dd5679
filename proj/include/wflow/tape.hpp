#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "wflow/kernels.hpp"
#include "wflow/tensor.hpp"

namespace wflow {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  matmul,
  affine,
  linear,
  tanh,
  softplus,
  sigmoid,
  exp,
  log,
  square,
  sum,
  row_sum,
  mean,
  concat,
  slice,
};

std::string_view op_name(Op op);

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

/// Append-only record of primitive applications. Nodes are stored in
/// topological order by construction. Recording is single-writer; once
/// recording stops the tape can be swept in reverse concurrently.
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    std::uint32_t in[3] = {0, 0, 0};
    double scalar = 0.0;
    std::size_t start = 0;
    std::size_t count = 0;
    bool needs_grad = false;
    Tensor value;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Leaf with a gradient slot; slots are numbered in creation order.
  Var parameter(Tensor value);
  /// Leaf without a gradient slot. `requires_grad` lets grad_wrt() reach it.
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Op op, std::uint32_t a, std::uint32_t b = 0, std::uint32_t c = 0, double scalar = 0.0,
             std::size_t start = 0, std::size_t count = 0);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t parameter_count() const { return slots_.size(); }
  Var parameter_var(std::size_t slot) const { return Var{const_cast<Tape*>(this), slots_[slot]}; }
  /// Leaves in creation order (parameters, inputs and constants).
  std::vector<Var> leaves() const;

  /// Reverse sweep from `output` seeded with `seed`; one gradient per parameter slot.
  std::vector<Tensor> grad(Var output, const Tensor& seed) const;
  /// Reverse sweep returning the adjoint of a single node that requires grad.
  Tensor grad_wrt(Var output, Var wrt, const Tensor& seed) const;

  /// Re-evaluates every node after replacing leaf values (same order as leaves()).
  void replay(std::span<const Tensor> leaf_values);

 private:
  std::vector<Tensor> sweep(Var output, const Tensor& seed) const;
  Tensor evaluate(const Node& n) const;

  // deque keeps references to recorded values stable while recording continues
  std::deque<Node> nodes_;
  std::vector<std::uint32_t> slots_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var affine(Var x, Var w, Var b);
Var linear(Var x, Var w);
Var tanh(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sum(Var a);
Var row_sum(Var a);
Var mean(Var a);
Var concat(Var a, Var b);
Var slice(Var a, std::size_t start, std::size_t count);

inline Var constant_like(const Var& like, Tensor value) { return like.tape->constant(std::move(value)); }
inline const Tensor& value_of(const Var& v) { return v.value(); }

}  // namespace wflow

#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "wflow/tape.hpp"

namespace wflow {

/// One primitive application. Operands index the value list, which holds the
/// program inputs followed by the result of every earlier instruction.
struct Instruction {
  Op op = Op::add;
  std::vector<std::size_t> args;
  double scalar = 0.0;
  std::size_t start = 0;
  std::size_t count = 0;
};

/// A straight-line sequence of primitives over a fixed number of inputs.
struct Program {
  std::size_t input_count = 0;
  /// Inputs that receive gradient slots; empty means "all inputs".
  std::vector<bool> differentiable;
  std::vector<Instruction> code;
  /// Value-list indices returned as outputs; empty means "last value".
  std::vector<std::size_t> outputs;

  /// Appends an instruction and returns the value index of its result.
  std::size_t emit(Op op, std::vector<std::size_t> args, double scalar = 0.0, std::size_t start = 0,
                   std::size_t count = 0);
};

struct Recording {
  std::vector<Tensor> outputs;
  std::unique_ptr<Tape> tape;
  /// Tape node of every value-list entry, so callers can seed sweeps.
  std::vector<Var> values;
  std::vector<Var> output_vars;
};

/// Evaluates `program` on `inputs`, recording every primitive. Shape errors
/// name the offending instruction index.
Recording record_forward(const Program& program, const std::vector<Tensor>& inputs);

}  // namespace wflow

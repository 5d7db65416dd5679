#include "wflow/program.hpp"

#include <string>

#include "wflow/errors.hpp"

namespace wflow {

std::size_t Program::emit(Op op, std::vector<std::size_t> args, double scalar, std::size_t start,
                          std::size_t count) {
  code.push_back(Instruction{op, std::move(args), scalar, start, count});
  return input_count + code.size() - 1;
}

Recording record_forward(const Program& program, const std::vector<Tensor>& inputs) {
  if (inputs.size() != program.input_count) {
    throw ShapeError("record_forward: expected " + std::to_string(program.input_count) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  Recording rec;
  rec.tape = std::make_unique<Tape>();
  Tape& tape = *rec.tape;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool diff = program.differentiable.empty() || program.differentiable.at(i);
    rec.values.push_back(diff ? tape.parameter(inputs[i]) : tape.constant(inputs[i]));
  }
  for (std::size_t pc = 0; pc < program.code.size(); ++pc) {
    const Instruction& ins = program.code[pc];
    auto arg = [&](std::size_t k) -> Var {
      if (k >= ins.args.size()) {
        throw ShapeError("instruction #" + std::to_string(pc) + " (" + std::string(op_name(ins.op)) +
                         "): missing operand");
      }
      const std::size_t ref = ins.args[k];
      if (ref >= rec.values.size()) {
        throw ShapeError("instruction #" + std::to_string(pc) + ": operand refers to a later value");
      }
      return rec.values[ref];
    };
    try {
      Var out;
      switch (ins.op) {
        case Op::leaf: throw ShapeError("leaf is not an instruction");
        case Op::add: out = add(arg(0), arg(1)); break;
        case Op::sub: out = sub(arg(0), arg(1)); break;
        case Op::mul: out = mul(arg(0), arg(1)); break;
        case Op::scale: out = scale(arg(0), ins.scalar); break;
        case Op::add_scalar: out = add_scalar(arg(0), ins.scalar); break;
        case Op::matmul: out = matmul(arg(0), arg(1)); break;
        case Op::affine: out = affine(arg(0), arg(1), arg(2)); break;
        case Op::linear: out = linear(arg(0), arg(1)); break;
        case Op::tanh: out = tanh(arg(0)); break;
        case Op::softplus: out = softplus(arg(0)); break;
        case Op::sigmoid: out = sigmoid(arg(0)); break;
        case Op::exp: out = exp(arg(0)); break;
        case Op::log: out = log(arg(0)); break;
        case Op::square: out = square(arg(0)); break;
        case Op::sum: out = sum(arg(0)); break;
        case Op::row_sum: out = row_sum(arg(0)); break;
        case Op::mean: out = mean(arg(0)); break;
        case Op::concat: out = concat(arg(0), arg(1)); break;
        case Op::slice: out = slice(arg(0), ins.start, ins.count); break;
      }
      rec.values.push_back(out);
    } catch (const ShapeError& e) {
      throw ShapeError("instruction #" + std::to_string(pc) + ": " + e.what());
    }
  }
  std::vector<std::size_t> outs = program.outputs;
  if (outs.empty()) outs.push_back(rec.values.size() - 1);
  for (std::size_t o : outs) {
    if (o >= rec.values.size()) throw ShapeError("record_forward: output index out of range");
    rec.output_vars.push_back(rec.values[o]);
    rec.outputs.push_back(rec.values[o].value());
  }
  return rec;
}

}  // namespace wflow

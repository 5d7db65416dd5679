#include "wflow/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "wflow/errors.hpp"
#include "wflow/rng.hpp"

namespace wflow {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  if (name == "identity") return Activation::identity;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("Mlp needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    if (L.bias.rows() != 1 || L.bias.cols() != L.weight.rows()) throw ShapeError("Mlp: bias/weight mismatch");
    if (l > 0 && L.weight.cols() != layers_[l - 1].weight.rows()) throw ShapeError("Mlp: layer widths do not chain");
  }
}

Mlp Mlp::init(std::size_t in, std::span<const std::size_t> hidden_widths, std::size_t out, Activation hidden,
              std::uint64_t seed, bool zero_output) {
  if (in == 0 || out == 0) throw ShapeError("Mlp::init: zero width");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  std::size_t fan_in = in;
  auto draw = [&](std::size_t rows, std::size_t cols) {
    Tensor w = Tensor::zeros(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    return w;
  };
  for (std::size_t width : hidden_widths) {
    if (width == 0) throw ShapeError("Mlp::init: zero hidden width");
    layers.push_back(DenseLayer{draw(width, fan_in), Tensor::zeros(1, width), hidden});
    fan_in = width;
  }
  Tensor w_out = zero_output ? Tensor::zeros(out, fan_in) : draw(out, fan_in);
  layers.push_back(DenseLayer{std::move(w_out), Tensor::zeros(1, out), Activation::identity});
  return Mlp(std::move(layers));
}

std::size_t Mlp::in_width() const { return layers_.front().weight.cols(); }
std::size_t Mlp::out_width() const { return layers_.back().weight.rows(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.weight.size() + L.bias.size();
  return n;
}

std::vector<Activation> Mlp::activations() const {
  std::vector<Activation> out;
  for (const auto& L : layers_) out.push_back(L.activation);
  return out;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& L : layers_) {
    out.push_back(L.weight);
    out.push_back(L.bias);
  }
  return out;
}

void Mlp::set_parameters(std::span<const Tensor> params) {
  if (params.size() != 2 * layers_.size()) throw ShapeError("Mlp::set_parameters: wrong tensor count");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!params[2 * l].same_shape(layers_[l].weight) || !params[2 * l + 1].same_shape(layers_[l].bias)) {
      throw ShapeError("Mlp::set_parameters: shape mismatch in layer " + std::to_string(l));
    }
    layers_[l].weight = params[2 * l];
    layers_[l].bias = params[2 * l + 1];
  }
}

std::vector<Var> Mlp::bind(Tape& tape) const {
  std::vector<Var> out;
  for (const auto& L : layers_) {
    out.push_back(tape.parameter(L.weight));
    out.push_back(tape.parameter(L.bias));
  }
  return out;
}

}  // namespace wflow

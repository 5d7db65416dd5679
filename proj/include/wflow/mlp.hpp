#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "wflow/kernels.hpp"
#include "wflow/tape.hpp"
#include "wflow/tensor.hpp"

namespace wflow {

enum class Activation : std::uint8_t { tanh = 0, softplus = 1, identity = 2 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out
  Activation activation = Activation::identity;
};

/// Fully connected network. Parameters are exposed as the flat list
/// [W0, b0, W1, b1, ...] so they can be bound to tape parameter slots.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// Hidden layers use `hidden` activation with U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  /// weights and zero bias; the output layer is identity-activated and either
  /// zero (`zero_output`) or drawn like the hidden layers.
  static Mlp init(std::size_t in, std::span<const std::size_t> hidden_widths, std::size_t out,
                  Activation hidden, std::uint64_t seed, bool zero_output);

  std::size_t in_width() const;
  std::size_t out_width() const;
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::vector<Activation> activations() const;

  std::vector<Tensor> parameters() const;
  void set_parameters(std::span<const Tensor> params);
  /// Parameter tensors as tape slots, in parameters() order.
  std::vector<Var> bind(Tape& tape) const;

 private:
  std::vector<DenseLayer> layers_;
};

/// Network output together with its directional derivatives along the
/// supplied input tangents (forward-mode propagation expressed with the same
/// primitives, so it stays differentiable on a tape).
template <typename T>
struct Jet {
  T value;
  std::vector<T> tangents;
};

template <typename T>
Jet<T> mlp_forward(std::span<const Activation> activations, std::span<const T> params, T input,
                   std::vector<T> tangents) {
  T h = std::move(input);
  for (std::size_t l = 0; l < activations.size(); ++l) {
    const T& w = params[2 * l];
    const T& b = params[2 * l + 1];
    T a = affine(h, w, b);
    for (auto& dt : tangents) dt = linear(dt, w);
    switch (activations[l]) {
      case Activation::identity:
        h = a;
        break;
      case Activation::tanh: {
        h = tanh(a);
        if (!tangents.empty()) {
          T slope = add_scalar(scale(square(h), -1.0), 1.0);
          for (auto& dt : tangents) dt = mul(slope, dt);
        }
        break;
      }
      case Activation::softplus: {
        h = softplus(a);
        if (!tangents.empty()) {
          T slope = sigmoid(a);
          for (auto& dt : tangents) dt = mul(slope, dt);
        }
        break;
      }
    }
  }
  return Jet<T>{std::move(h), std::move(tangents)};
}

template <typename T>
T mlp_value(std::span<const Activation> activations, std::span<const T> params, T input) {
  return mlp_forward<T>(activations, params, std::move(input), {}).value;
}

}  // namespace wflow

#pragma once

// Convolutional building blocks: the residual block, conv + ReLU, and the token MLP.

#include <optional>
#include <string>

#include "rsca/ops.hpp"
#include "rsca/parameter.hpp"

namespace rsca {

template <class T>
struct ConvParams {
  Tensor<T> weight;  // (out, in, k, k)
  Tensor<T> bias;    // (1, out, 1, 1); may be undefined

  static ConvParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                           std::size_t k, bool with_bias = true) {
    ConvParams p;
    p.weight = store.add(prefix + ".weight", Shape{out, in, k, k}, Init::kaiming_normal, in * k * k);
    if (with_bias) p.bias = store.add(prefix + ".bias", Shape{1, out, 1, 1}, Init::zeros);
    return p;
  }

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
};

template <class T>
Tensor<T> apply_conv(const Tensor<T>& x, const ConvParams<T>& p, std::size_t pad = 0) {
  return conv2d(x, p.weight, p.bias, 1, pad);
}

template <class T>
struct LinearParams {
  Tensor<T> weight;  // (1, 1, out, in)
  Tensor<T> bias;    // (1, 1, 1, out)

  static LinearParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out) {
    LinearParams p;
    p.weight = store.add(prefix + ".weight", Shape{1, 1, out, in}, Init::kaiming_normal, in);
    p.bias = store.add(prefix + ".bias", Shape{1, 1, 1, out}, Init::zeros);
    return p;
  }
};

template <class T>
Tensor<T> apply_linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return linear(x, p.weight, p.bias);
}

/// T(x) = w2 * relu(w1 * x) with a 1x1 channel transform then a 3x3 projection (pad 1);
/// the shortcut is x itself when widths agree, otherwise a 1x1 projection.
template <class T>
struct ResidualBlockParams {
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  std::optional<ConvParams<T>> projection;

  static ResidualBlockParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                                    std::size_t out) {
    ResidualBlockParams p;
    p.conv1 = ConvParams<T>::create(store, prefix + ".conv1", in, out, 1);
    p.conv2 = ConvParams<T>::create(store, prefix + ".conv2", out, out, 3);
    if (in != out) p.projection = ConvParams<T>::create(store, prefix + ".proj", in, out, 1);
    return p;
  }
};

template <class T>
Tensor<T> residual_block(const Tensor<T>& x, const ResidualBlockParams<T>& p) {
  if (x.shape().c != p.conv1.in_channels()) {
    throw DimensionError("residual_block: input " + x.shape().str() + " expects " +
                         std::to_string(p.conv1.in_channels()) + " channels");
  }
  Tensor<T> branch = apply_conv(relu(apply_conv(x, p.conv1)), p.conv2, 1);
  Tensor<T> shortcut = p.projection ? apply_conv(x, *p.projection) : x;
  return relu(add(branch, shortcut));
}

/// relu(conv3x3(x)), stride 1, pad 1.
template <class T>
Tensor<T> conv_relu_block(const Tensor<T>& x, const ConvParams<T>& p) {
  return relu(apply_conv(x, p, 1));
}

template <class T>
struct MlpParams {
  static constexpr std::size_t hidden_ratio = 4;
  LinearParams<T> fc1;
  LinearParams<T> fc2;

  static MlpParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim) {
    return {LinearParams<T>::create(store, prefix + ".fc1", dim, hidden_ratio * dim),
            LinearParams<T>::create(store, prefix + ".fc2", hidden_ratio * dim, dim)};
  }
};

/// fc2(gelu(fc1(tokens))); the caller adds the residual.
template <class T>
Tensor<T> mlp(const Tensor<T>& tokens, const MlpParams<T>& p) {
  return apply_linear(activate(apply_linear(tokens, p.fc1), Activation::gelu), p.fc2);
}

}  // namespace rsca

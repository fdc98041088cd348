#pragma once

// Segmentation losses on probability maps: binary cross-entropy, +1-smoothed soft Dice, and their mean.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rsca/ops.hpp"

namespace rsca {

inline constexpr double kProbabilityClamp = 1e-7;

template <class T>
void require_binary(const Tensor<T>& mask, const char* what) {
  for (T v : mask.data()) {
    if (v != T(0) && v != T(1)) {
      throw ValidationError(std::string(what) + ": mask values must be 0 or 1, found " + std::to_string(v));
    }
  }
}

/// -(1/N) sum [y log p + (1-y) log(1-p)], with p clamped to [1e-7, 1-1e-7].
template <class T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "bce_loss");
  const T lo = static_cast<T>(kProbabilityClamp);
  const T hi = T(1) - lo;
  const std::size_t n = pred.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pred[i], lo, hi);
    const double y = target[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  const T value = static_cast<T>(acc / static_cast<double>(n));
  return Tensor<T>::make_result(Shape{}, {value}, {pred, target}, [pred, target, lo, hi, n](const Node<T>& o) {
    T* g = grad_sink(pred);
    if (!g) return;
    const T scale_n = o.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T p = pred[i];
      const T y = target[i];
      g[i] += scale_n * (-(y / std::max(p, lo)) + (T(1) - y) / std::max(T(1) - p, T(1) - hi));
    }
  });
}

/// 1 - (2 sum(p y) + 1) / (sum(p) + sum(y) + 1).
template <class T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "dice_loss");
  double inter = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * target[i];
    total += static_cast<double>(pred[i]) + target[i];
  }
  const double num = 2.0 * inter + 1.0;
  const double den = total + 1.0;
  const T value = static_cast<T>(1.0 - num / den);
  return Tensor<T>::make_result(Shape{}, {value}, {pred, target}, [pred, target, num, den](const Node<T>& o) {
    const double g0 = o.grad[0];
    // d/dp_i = -(2 y_i den - num) / den^2, and symmetrically for y.
    if (T* g = grad_sink(pred)) {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        g[i] += static_cast<T>(-g0 * (2.0 * target[i] * den - num) / (den * den));
      }
    }
    if (T* g = grad_sink(target)) {
      for (std::size_t i = 0; i < target.size(); ++i) {
        g[i] += static_cast<T>(-g0 * (2.0 * pred[i] * den - num) / (den * den));
      }
    }
  });
}

/// (BCE + Dice) / 2.
template <class T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return scale(add(bce_loss(pred, target), dice_loss(pred, target)), T(0.5));
}

}  // namespace rsca

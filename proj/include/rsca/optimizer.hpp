#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rsca/parameter.hpp"

namespace rsca {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.0;      // sgd only
  double lambda_decay = 0.98;  // lr_epoch = lr * lambda_decay^epoch
};

/// Adam (bias-corrected) or plain SGD over the trainable entries of a parameter store, with a
/// multiplicative per-epoch learning-rate schedule.
template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

  void set_epoch(std::size_t epoch) { epoch_ = epoch; }
  double current_lr() const { return config_.lr * std::pow(config_.lambda_decay, static_cast<double>(epoch_)); }

  void step(ParameterStore<T>& store) {
    auto& entries = store.entries();
    if (first_.empty()) {
      for (const auto& e : entries) {
        first_.emplace_back(e.trainable ? e.value.size() : 0, T(0));
        second_.emplace_back(config_.kind == OptimizerKind::adam && e.trainable ? e.value.size() : 0, T(0));
      }
    }
    if (first_.size() != entries.size()) throw ValidationError("optimizer: parameter set changed between steps");
    ++steps_;
    const double lr = current_lr();
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t p = 0; p < entries.size(); ++p) {
      auto& e = entries[p];
      if (!e.trainable || !e.value.has_grad()) continue;
      auto values = e.value.mutable_data();
      const Buffer<T>& grad = e.value.raw_grad();
      auto& m = first_[p];
      if (config_.kind == OptimizerKind::adam) {
        auto& v = second_[p];
        const T b1 = static_cast<T>(config_.beta1);
        const T b2 = static_cast<T>(config_.beta2);
        const T step = static_cast<T>(lr / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(config_.eps);
        for (std::size_t i = 0; i < values.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
          v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
          values[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
      } else {
        const T mom = static_cast<T>(config_.momentum);
        const T rate = static_cast<T>(lr);
        for (std::size_t i = 0; i < values.size(); ++i) {
          m[i] = mom * m[i] + grad[i];
          values[i] -= rate * m[i];
        }
      }
    }
  }

  /// First-moment buffers, one per store entry (empty for buffers); exposed for inspection.
  const std::vector<Buffer<T>>& moments() const { return first_; }

 private:
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::size_t epoch_ = 0;
  std::vector<Buffer<T>> first_;
  std::vector<Buffer<T>> second_;
};

}  // namespace rsca

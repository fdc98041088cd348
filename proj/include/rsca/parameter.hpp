#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rsca/ops.hpp"
#include "rsca/tensor.hpp"

namespace rsca {

/// 64-bit FNV-1a; stable across platforms, used for seeding and config fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  return fnv1a64(tag, fnv1a64(std::to_string(seed)));
}

enum class Init { kaiming_normal, zeros, ones };

/// A named entry of the model manifest. Buffers (running statistics) are checkpointed but not trained.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Init init = Init::zeros;
  bool trainable = true;
};

template <class T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Registers a parameter; the initial values depend only on (name, seed). fan_in drives the
  /// Kaiming std sqrt(2 / fan_in).
  Tensor<T> add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1, bool trainable = true) {
    if (index_.contains(name)) throw ValidationError("duplicate parameter name: " + name);
    Tensor<T> value(shape, init == Init::ones ? T(1) : T(0));
    if (init == Init::kaiming_normal) {
      std::mt19937_64 engine(mix_seed(seed_, name));
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (T& v : value.mutable_data()) v = static_cast<T>(normal(engine));
    }
    value.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, value, init, trainable});
    return value;
  }

  Tensor<T> buffer(const std::string& name, Shape shape, T fill) {
    Tensor<T> t = add(name, shape, fill == T(1) ? Init::ones : Init::zeros, 1, false);
    for (T& v : t.mutable_data()) v = fill;
    return t;
  }

  const std::vector<Parameter<T>>& entries() const { return entries_; }
  std::vector<Parameter<T>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return entries_[it->second].value;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.value);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

 private:
  std::uint64_t seed_;
  std::vector<Parameter<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rsca

#pragma once

// Dense N x C x H x W tensor with a dynamically recorded reverse-mode tape.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rsca {

/// Tensor storage. Aligned to the SIMD packet width so vectorized kernels take the same code
/// path, and produce the same bits, regardless of where the allocator places a buffer.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline void validate_shape(const Shape& s) {
  // A zero channel count is allowed so that an empty tensor can be concatenated.
  if (s.n == 0 || s.h == 0 || s.w == 0) {
    throw DimensionError("tensor dimensions must be >= 1, got " + s.str());
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

/// Recording switch for the tape; thread-local so independent models can run on separate threads.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    node_->shape = shape;
    node_->data.assign(shape.size(), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    if (values.size() != shape.size()) {
      throw DimensionError("data length " + std::to_string(values.size()) +
                           " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data.assign(values.begin(), values.end());
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access; meant for leaves (parameters, inputs), never for recorded results.
  std::span<T> mutable_data() { return node_->data; }
  /// Copy of the values.
  std::vector<T> vec() const { return {node_->data.begin(), node_->data.end()}; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = node_->shape;
    return node_->data[((n * s.c + c) * s.h + h) * s.w + w];
  }
  T item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(size(), T(0));
    return {node_->grad.begin(), node_->grad.end()};
  }
  void zero_grad() { node_->grad.clear(); }
  Buffer<T>& raw_grad() { return node_->grad; }

  /// Copy of the values with no tape history.
  Tensor detach() const { return from_buffer(shape(), Buffer<T>(node_->data)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Adopts an already aligned buffer without copying.
  static Tensor from_buffer(Shape shape, Buffer<T> values) {
    validate_shape(shape);
    if (values.size() != shape.size()) {
      throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
    }
    Tensor out;
    out.node_ = std::make_shared<Node<T>>();
    out.node_->shape = shape;
    out.node_->data = std::move(values);
    return out;
  }

  /// Reverse-mode sweep from a scalar. Intermediate graph state is released afterwards.
  void backward() {
    if (size() != 1) throw DimensionError("backward() requires a scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [cur, next] = stack.back();
      if (next < cur->parents.size()) {
        Node<T>* p = cur->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* cur = *it;
      if (cur->backward_fn && !cur->grad.empty()) cur->backward_fn(*cur);
    }
    for (Node<T>* cur : order) {
      if (cur->backward_fn) {
        cur->backward_fn = nullptr;
        cur->parents.clear();
        if (cur != node_.get()) {
          cur->grad.clear();
          cur->grad.shrink_to_fit();
        }
      }
    }
  }

  /// Builds an op result, wiring the tape only when recording is on and some input needs a gradient.
  template <class Backward>
  static Tensor make_result(Shape shape, Buffer<T> values, std::initializer_list<Tensor> inputs,
                            Backward&& backward_fn) {
    Tensor out = from_buffer(shape, std::move(values));
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const Tensor& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    if (!needs) return out;
    out.node_->requires_grad = true;
    for (const Tensor& in : inputs) {
      if (in.defined() && in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward_fn = std::forward<Backward>(backward_fn);
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Gradient sink of an input inside a backward closure; nullptr when the input does not need one.
template <class T>
T* grad_sink(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->grad_buffer();
}

template <class T>
Tensor<T> scalar(T value) {
  return Tensor<T>(Shape{1, 1, 1, 1}, std::vector<T>{value});
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace rsca

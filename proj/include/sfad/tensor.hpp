#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfad/error.hpp"

namespace sfad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major n-dimensional array.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape accumulate gradients into parameters held by a model. Use
/// clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;

  Tensor() : node_(std::make_shared<Node>()) {}

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
    if (sfad::numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + sfad::to_string(shape) + " holds " +
                           std::to_string(sfad::numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    for (auto d : shape) {
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + sfad::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) {
    auto n = sfad::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + sfad::to_string(shape()));
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }
  T& at(std::initializer_list<std::size_t> index) { return node_->data[offset(index)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; allocated (zero-filled) on first access.
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Independent copy of the values; does not require grad.
  Tensor clone() const { return Tensor(shape(), node_->data); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for shape " + sfad::to_string(shape()));
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : index) {
      if (v >= node_->shape[i]) throw DimensionError("index out of range for shape " + sfad::to_string(shape()));
      off = off * node_->shape[i] + v;
      ++i;
    }
    return off;
  }

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations.
///
/// Operations append a backward closure while a TapeScope is active and at
/// least one of their inputs requires grad. backward() replays the record in
/// reverse exactly once per entry.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

  void backward(const Tensor<T>& root) {
    if (root.numel() != 1) {
      throw UsageError("backward() needs a scalar root, got shape " + to_string(root.shape()));
    }
    auto node = root.node();
    node->ensure_grad();
    node->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  /// Drops every closure and with it every intermediate the tape kept alive.
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::function<void()>> entries_;
};

/// Makes `tape` the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording for the current thread.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
  ~NoGradScope() { Tape<T>::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace sfad

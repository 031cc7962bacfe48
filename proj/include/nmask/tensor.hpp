#pragma once

// Dense float64 arrays and a dynamic reverse-mode differentiation graph.
//
// `Array` is a plain value (shape + row-major data). `Tensor` is a shared
// handle to a graph node that owns an Array, an optional gradient buffer and
// the closure that propagates gradients to its inputs. Leaves created with
// `Tensor::parameter` keep their gradient across backward passes; every
// other node is rebuilt per forward pass and released with the last handle.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nmask/error.hpp"

namespace nmask {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel_of(shape_) != data_.size())
      throw ShapeError("Array: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " elements");
  }

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double item() const {
    if (data_.size() != 1) throw ContractError("Array::item on " + shape_str(shape_));
    return data_[0];
  }

  Array reshaped(Shape shape) const {
    if (numel_of(shape) != data_.size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    return Array(std::move(shape), data_);
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  std::uint64_t id = 0;
  const char* op = "leaf";
  Array value;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> inputs;
  // Reads `grad` of the owning node and accumulates into the inputs.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.numel(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// Constant (no gradient tracking).
  explicit Tensor(Array value) : node_(make_node(std::move(value), false)) {}

  /// Trainable leaf; gradients accumulate in it across backward calls.
  static Tensor parameter(Array value) { return Tensor(make_node(std::move(value), true)); }

  static Tensor constant(Array value) { return Tensor(std::move(value)); }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient as an Array (zeros when none has been accumulated).
  Array grad() const {
    if (node_->grad.empty()) return Array(shape());
    return Array(shape(), node_->grad);
  }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return Tensor(node_->value); }

  detail::NodePtr node() const { return node_; }

  /// Build an interior node. `backward` receives the new node and must add
  /// its contribution into each input that requires grad.
  static Tensor make(const char* op, Array value, std::vector<Tensor> inputs,
                     std::function<void(detail::Node&)> backward) {
    auto node = make_node(std::move(value), false);
    node->op = op;
    node->is_leaf = false;
    for (auto& in : inputs) {
      node->requires_grad = node->requires_grad || in.requires_grad();
      node->inputs.push_back(in.node_);
    }
    if (node->requires_grad) node->backward = std::move(backward);
    else node->inputs.clear();
    return Tensor(node);
  }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  static detail::NodePtr make_node(Array value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->id = detail::next_node_id();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
  }

  detail::NodePtr node_;
};

/// Reverse pass from a scalar `loss`. Interior gradients are recomputed from
/// scratch; leaf gradients ACCUMULATE (call zero_grad or use `grad`).
/// Nodes are visited once each, in reverse creation order.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::vector<detail::Node*> stack{loss.node().get()};
  std::vector<const detail::Node*> seen;
  auto mark = [&](detail::Node* n) {
    auto it = std::lower_bound(seen.begin(), seen.end(), n);
    if (it != seen.end() && *it == n) return false;
    seen.insert(it, n);
    return true;
  };
  mark(stack.back());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs)
      if (in->requires_grad && mark(in.get())) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  for (auto* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.numel(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto* n : order)
    if (!n->is_leaf && n->backward) n->backward(*n);
}

/// Gradients of `loss` w.r.t. `params`, resetting their buffers first.
/// Parameters the loss does not reach get zero gradients.
inline std::vector<Array> grad(const Tensor& loss, std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
  backward(loss);
  std::vector<Array> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(p.grad());
  return out;
}

inline std::vector<Array> grad(const Tensor& loss, std::vector<Tensor> params) {
  return grad(loss, std::span<Tensor>(params));
}

}  // namespace nmask

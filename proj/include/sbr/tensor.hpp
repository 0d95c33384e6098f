#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

namespace sbr {

using Shape = std::vector<Eigen::Index>;

template <class S>
using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

template <class S>
using MatrixRM =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

template <class S>
struct Node {
  Shape shape;
  Array<S> value;
  Array<S> grad;  // sized lazily on first backward pass
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into the parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Array<S>::Zero(value.size());
  }
};

}  // namespace detail

// Handle to a value in the computation graph. Copies share the node.
// Values are immutable after construction; grads accumulate via backward().
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  Tensor(Shape shape, Array<S> data) : node_(std::make_shared<detail::Node<S>>()) {
    if (shape_size(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), [](Eigen::Index n) { return Array<S>::Zero(n); });
  }

  static Tensor full(Shape shape, S v) {
    return Tensor(std::move(shape), [v](Eigen::Index n) {
      return Array<S>::Constant(n, v);
    });
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from_vector(Shape shape, const std::vector<S>& v) {
    Array<S> a(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), a.data());
    return Tensor(std::move(shape), std::move(a));
  }

  // Uniform in [lo, hi), element order fixed by the flat layout.
  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi) {
    Array<S> a(shape_size(shape));
    for (Eigen::Index i = 0; i < a.size(); ++i)
      a[i] = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return Tensor(std::move(shape), std::move(a));
  }

  static Tensor normal(Shape shape, Rng& rng) {
    Array<S> a(shape_size(shape));
    for (Eigen::Index i = 0; i < a.size(); ++i)
      a[i] = static_cast<S>(rng.normal());
    return Tensor(std::move(shape), std::move(a));
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Eigen::Index size() const { return node_->value.size(); }
  Eigen::Index dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }

  const Array<S>& values() const { return node_->value; }
  S value(Eigen::Index i = 0) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    if (b) node_->ensure_grad();
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array<S>& grad() const {
    if (!has_grad()) throw UsageError("tensor grad not populated; call backward() first");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->grad.size()) node_->grad.setZero();
  }

  // In-place parameter update. Only legal on leaves (no recorded parents):
  // rewriting an interior node would silently desynchronize the graph.
  void update_values(const Array<S>& v) {
    if (!node_->parents.empty())
      throw UsageError("update_values is restricted to leaf tensors");
    if (v.size() != node_->value.size())
      throw DimensionError("update_values size mismatch");
    node_->value = v;
  }

  detail::Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<S>>& node_ptr() const { return node_; }

  // Graph construction hook used by the op implementations.
  static Tensor make_op(Shape shape, Array<S> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node<S>&)> backprop) {
    Tensor t(std::move(shape), std::move(value));
    bool track = false;
    for (const Tensor& p : parents) track = track || p.node_->requires_grad;
    if (track) {
      t.node_->requires_grad = true;
      for (const Tensor& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backprop = std::move(backprop);
    }
    if (!t.node_->value.isFinite().all())
      throw NumericError("non-finite value produced by tensor op");
    return t;
  }

 private:
  template <class Init>
  Tensor(Shape shape, Init init) : node_(std::make_shared<detail::Node<S>>()) {
    node_->value = init(shape_size(shape));
    node_->shape = std::move(shape);
  }

  std::shared_ptr<detail::Node<S>> node_;
};

// Reverse-mode sweep from a scalar loss. Grads accumulate across calls;
// zero them between steps via the owning parameters.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) throw UsageError("backward() requires a scalar loss");
  if (!loss.requires_grad()) return;

  // Postorder DFS gives a topological order of the reachable subgraph.
  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node<S>* n : order) n->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<S>* n = *it;
    if (n->backprop) {
      n->backprop(*n);
      if (!n->grad.isFinite().all())
        throw NumericError("non-finite gradient during backward()");
    }
  }
}

}  // namespace sbr

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcrnet/ops.hpp"
#include "dcrnet/tensor.hpp"

namespace dcrnet {

using NodeId = int32_t;

/// Trainable tensor plus its gradient accumulator. Gradients accumulate with
/// += across backward calls; zero_grad resets them.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros_like(value)) {}

  void zero_grad() { grad.fill(T(0)); }

  template <typename U>
  Parameter<U> cast() const {
    Parameter<U> p;
    p.name = name;
    p.value = value.template cast<U>();
    p.grad = Tensor<U>::zeros_like(p.value);
    return p;
  }
};

/// Record of executed forward operations. Append order is execution order,
/// which is already topological, so the backward sweep walks nodes once in
/// reverse. Values of all intermediates stay alive on the tape until clear().
template <typename T>
class Tape {
 public:
  /// Records an input value. If `param` is given, the backward sweep adds the
  /// leaf's gradient into param->grad.
  NodeId leaf(Tensor<T> value, Parameter<T>* param = nullptr);

  NodeId append(Tensor<T> value, std::function<void(Tape&, NodeId)> backward_fn);

  const Tensor<T>& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

  /// Gradient buffer for a node, zero-initialized on first access.
  Tensor<T>& grad_buffer(NodeId id);

  const Tensor<T>& grad_at(NodeId id) const { return grads_[static_cast<size_t>(id)]; }

  bool has_grad(NodeId id) const {
    return static_cast<size_t>(id) < grads_.size() && !grads_[static_cast<size_t>(id)].empty();
  }

  /// Whether a gradient flowing into this node goes anywhere: interior nodes
  /// propagate and parameter leaves accumulate, but plain value leaves sink.
  bool node_wants_grad(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.backward_fn != nullptr || n.param != nullptr;
  }

  /// Reverse sweep from a scalar loss. Populates Parameter::grad (+=) for
  /// every parameter leaf reachable from the loss.
  void backward(NodeId loss);

  /// Drops all nodes and gradients, keeping buffer capacity for reuse.
  void clear();

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  struct Node {
    Tensor<T> value;
    std::function<void(Tape&, NodeId)> backward_fn;  // null for leaves
    Parameter<T>* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

// Recorded operator set. Each call runs the forward kernel eagerly and
// appends the node with its backward closure.
template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId input, NodeId weight, const ConvSpec& spec);

template <typename T>
NodeId linear(Tape<T>& tape, NodeId input, NodeId weight, NodeId bias);

/// Running statistics are updated in place at record time when training.
template <typename T>
NodeId batchnorm2d(Tape<T>& tape, NodeId input, NodeId gamma, NodeId beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                   bool training);

template <typename T>
NodeId prelu(Tape<T>& tape, NodeId input, NodeId alpha);

template <typename T>
NodeId concat_channels(Tape<T>& tape, NodeId a, NodeId b);

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b);

template <typename T>
NodeId reshape(Tape<T>& tape, NodeId input, std::vector<int64_t> new_shape);

template <typename T>
NodeId mse_loss(Tape<T>& tape, NodeId pred, NodeId target);

}  // namespace dcrnet

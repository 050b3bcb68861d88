#include "dcrnet/autodiff.hpp"

#include "dcrnet/errors.hpp"

namespace dcrnet {

namespace {

template <typename T>
void acc_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* __restrict d = dst.data();
  const T* __restrict s = src.data();
  int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
NodeId Tape<T>::leaf(Tensor<T> value, Parameter<T>* param) {
  nodes_.push_back(Node{std::move(value), nullptr, param});
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Tape<T>::append(Tensor<T> value, std::function<void(Tape&, NodeId)> backward_fn) {
  nodes_.push_back(Node{std::move(value), std::move(backward_fn), nullptr});
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(NodeId id) {
  auto& g = grads_[static_cast<size_t>(id)];
  if (g.empty()) g = Tensor<T>::zeros(nodes_[static_cast<size_t>(id)].value.shape());
  return g;
}

template <typename T>
void Tape<T>::backward(NodeId loss) {
  if (loss < 0 || loss >= size()) {
    throw UsageError("backward: node id out of range");
  }
  if (value(loss).numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape (" +
                     Tensor<T>::shape_string(value(loss).shape()) + ")");
  }
  grads_.assign(nodes_.size(), Tensor<T>());
  grad_buffer(loss).fill(T(1));
  for (NodeId id = loss; id >= 0; --id) {
    if (!has_grad(id)) continue;
    Node& node = nodes_[static_cast<size_t>(id)];
    if (node.backward_fn) {
      node.backward_fn(*this, id);
    } else if (node.param) {
      acc_into(node.param->grad, grads_[static_cast<size_t>(id)]);
    }
  }
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  grads_.clear();
}

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId input, NodeId weight, const ConvSpec& spec) {
  Tensor<T> out = conv2d_forward(tape.value(input), tape.value(weight), spec);
  return tape.append(std::move(out), [input, weight, spec](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_at(self);
    if (t.node_wants_grad(input)) {
      conv2d_backward_input(t.grad_buffer(input), t.value(weight), g, spec);
    }
    if (t.node_wants_grad(weight)) {
      conv2d_backward_weight(t.grad_buffer(weight), t.value(input), g, spec);
    }
  });
}

template <typename T>
NodeId linear(Tape<T>& tape, NodeId input, NodeId weight, NodeId bias) {
  Tensor<T> out = linear_forward(tape.value(input), tape.value(weight), tape.value(bias));
  return tape.append(std::move(out), [input, weight, bias](Tape<T>& t, NodeId self) {
    linear_backward(t.grad_buffer(input), t.grad_buffer(weight), t.grad_buffer(bias),
                    t.value(input), t.value(weight), t.grad_at(self));
  });
}

template <typename T>
NodeId batchnorm2d(Tape<T>& tape, NodeId input, NodeId gamma, NodeId beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                   bool training) {
  BnSaved<T> saved;
  Tensor<T> out = batchnorm2d_forward(tape.value(input), tape.value(gamma), tape.value(beta),
                                      running_mean, running_var, momentum, eps, training, saved);
  return tape.append(std::move(out),
                     [input, gamma, beta, saved = std::move(saved)](Tape<T>& t, NodeId self) {
                       batchnorm2d_backward(t.grad_buffer(input), t.grad_buffer(gamma),
                                            t.grad_buffer(beta), t.value(input), t.value(gamma),
                                            saved, t.grad_at(self));
                     });
}

template <typename T>
NodeId prelu(Tape<T>& tape, NodeId input, NodeId alpha) {
  if (tape.value(alpha).numel() != 1) {
    throw DimensionError("prelu alpha must be a scalar");
  }
  T a = tape.value(alpha)[0];
  Tensor<T> out = prelu_forward(tape.value(input), a);
  return tape.append(std::move(out), [input, alpha, a](Tape<T>& t, NodeId self) {
    prelu_backward(t.grad_buffer(input), t.grad_buffer(alpha), t.value(input), a,
                   t.grad_at(self));
  });
}

template <typename T>
NodeId concat_channels(Tape<T>& tape, NodeId a, NodeId b) {
  Tensor<T> out = concat_channels_forward(tape.value(a), tape.value(b));
  return tape.append(std::move(out), [a, b](Tape<T>& t, NodeId self) {
    concat_channels_backward(t.grad_buffer(a), t.grad_buffer(b), t.grad_at(self));
  });
}

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b) {
  Tensor<T> out = add_forward(tape.value(a), tape.value(b));
  return tape.append(std::move(out), [a, b](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = t.grad_at(self);
    acc_into(t.grad_buffer(a), g);
    acc_into(t.grad_buffer(b), g);
  });
}

template <typename T>
NodeId reshape(Tape<T>& tape, NodeId input, std::vector<int64_t> new_shape) {
  Tensor<T> out = tape.value(input).reshaped(std::move(new_shape));
  return tape.append(std::move(out), [input](Tape<T>& t, NodeId self) {
    // Same element count; accumulate flat.
    acc_into(t.grad_buffer(input), t.grad_at(self).reshaped(t.value(input).shape()));
  });
}

template <typename T>
NodeId mse_loss(Tape<T>& tape, NodeId pred, NodeId target) {
  Tensor<T> out = mse_loss_forward(tape.value(pred), tape.value(target));
  return tape.append(std::move(out), [pred, target](Tape<T>& t, NodeId self) {
    if (t.node_wants_grad(target)) {
      mse_loss_backward(t.grad_buffer(pred), t.grad_buffer(target), t.value(pred),
                        t.value(target), t.grad_at(self)[0]);
    } else {
      mse_loss_backward_pred(t.grad_buffer(pred), t.value(pred), t.value(target),
                             t.grad_at(self)[0]);
    }
  });
}

#define DCRNET_INSTANTIATE_AUTODIFF(T)                                                     \
  template class Tape<T>;                                                                  \
  template NodeId conv2d<T>(Tape<T>&, NodeId, NodeId, const ConvSpec&);                    \
  template NodeId linear<T>(Tape<T>&, NodeId, NodeId, NodeId);                             \
  template NodeId batchnorm2d<T>(Tape<T>&, NodeId, NodeId, NodeId, Tensor<T>&, Tensor<T>&, \
                                 T, T, bool);                                              \
  template NodeId prelu<T>(Tape<T>&, NodeId, NodeId);                                      \
  template NodeId concat_channels<T>(Tape<T>&, NodeId, NodeId);                            \
  template NodeId add<T>(Tape<T>&, NodeId, NodeId);                                        \
  template NodeId reshape<T>(Tape<T>&, NodeId, std::vector<int64_t>);                      \
  template NodeId mse_loss<T>(Tape<T>&, NodeId, NodeId);

DCRNET_INSTANTIATE_AUTODIFF(float)
DCRNET_INSTANTIATE_AUTODIFF(double)

#undef DCRNET_INSTANTIATE_AUTODIFF

}  // namespace dcrnet

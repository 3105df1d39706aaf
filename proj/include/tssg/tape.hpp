// Reverse-mode gradient tape.
#pragma once

#include "tssg/tensor.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace tssg {

/// Handle to a value recorded on a GradTape. Only meaningful for the tape
/// that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Ordered record of executed primitives. A tape is confined to one logical
/// thread; values on it are immutable once recorded.
template <typename Scalar>
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, Var self)>;

  /// Leaf value. Trainable leaves receive a gradient after backward().
  Var leaf(Tensor<Scalar> value, bool trainable = false) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = trainable;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Records the output of a primitive. `backward` receives the output's own
  /// Var, reads grad(self) and accumulates into its inputs via grad_buffer().
  Var record(Tensor<Scalar> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (Var in : inputs) node.requires_grad = node.requires_grad || requires_grad(in);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<Scalar>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v; zeros if v did not
  /// influence it.
  const Tensor<Scalar>& grad(Var v) {
    Node& n = node(v);
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
  }

  /// Mutable gradient buffer, allocated on first use. Returns nullptr for
  /// values that do not require a gradient.
  Tensor<Scalar>* grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape());
    return &*n.grad;
  }

  /// Seeds d(output)/d(output) = 1 for a single-element output.
  void backward(Var output) {
    const auto& v = value(output);
    if (v.size() != 1) {
      throw ShapeError("backward() without a seed needs a scalar output, got shape " +
                       to_string(v.shape()));
    }
    backward(output, Tensor<Scalar>(v.shape(), Scalar(1)));
  }

  /// Reverse sweep from `output` seeded with `seed` (same shape as output).
  /// Each recorded primitive runs its backward exactly once, newest first.
  void backward(Var output, Tensor<Scalar> seed) {
    if (seed.shape() != value(output).shape()) {
      throw ShapeError("backward seed shape " + to_string(seed.shape()) +
                       " does not match output shape " + to_string(value(output).shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    Node& out = node(output);
    if (!out.requires_grad) return;
    out.grad = std::move(seed);
    for (int i = output.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || !n.grad) continue;
      n.backward(*this, Var{i});
      ++backward_calls_;
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && !n.grad) n.grad.emplace(n.value.shape());
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_calls() const { return backward_calls_; }

 private:
  struct Node {
    Tensor<Scalar> value;
    std::optional<Tensor<Scalar>> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Node& node(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::out_of_range("Var does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<GradTape*>(this)->node(v); }

  std::vector<Node> nodes_;
  std::size_t backward_calls_ = 0;
};

}  // namespace tssg

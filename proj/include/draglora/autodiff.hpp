#pragma once

// Minimal reverse-mode autodiff over dense tensors.
//
// A Tape records every op applied to its Vars. Nodes that (transitively) depend on a
// grad-requiring leaf carry a backward closure; everything else is plain forward
// evaluation. Tape::backward walks the nodes in reverse creation order, which is a
// valid topological order because ops only reference earlier nodes.

#include <cassert>
#include <deque>
#include <functional>
#include <memory>
#include <utility>

#include "draglora/tensor.hpp"

namespace draglora {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(id); }
  const std::vector<int>& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape->requires_grad(id); }
  // Gradient accumulated by the last backward pass (zeros if none reached it).
  const Tensor<T>& grad() const { return tape->grad(id); }
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-owning leaf: `ref` must outlive the tape.
  Var<T> leaf(const Tensor<T>& ref, bool requires_grad) {
    Node& n = push();
    n.external = &ref;
    n.requires_grad = requires_grad && grad_enabled_;
    return {this, last_id()};
  }

  Var<T> constant(Tensor<T> v) { return owned(std::move(v), false); }
  Var<T> variable(Tensor<T> v) { return owned(std::move(v), true); }

  const Tensor<T>& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  const Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape);
    return n.grad;
  }

  // Mutable gradient buffer used by backward closures; allocated lazily.
  Tensor<T>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape);
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  // Records an op result. `backward` is kept only when some input needs a gradient.
  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, std::function<void()> backward) {
    bool rg = false;
    if (grad_enabled_) {
      for (const Var<T>& in : inputs) {
        if (!in.valid()) continue;
        assert(in.tape == this);
        rg = rg || requires_grad(in.id);
      }
    }
    Node& n = push();
    n.value = std::move(v);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(backward);
    return {this, last_id()};
  }

  // Accumulates d(root)/d(node) for every node that requires a gradient.
  void backward(Var<T> root, T seed = T(1)) {
    for (Node& n : nodes_) n.grad = Tensor<T>();
    Tensor<T>& g = grad_buffer(root.id);
    g.fill(seed);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Node& push() {
    nodes_.emplace_back();
    return nodes_.back();
  }
  int last_id() const { return static_cast<int>(nodes_.size()) - 1; }

  Var<T> owned(Tensor<T> v, bool requires_grad) {
    Node& n = push();
    n.value = std::move(v);
    n.requires_grad = requires_grad && grad_enabled_;
    return {this, last_id()};
  }

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// Disables gradient recording for the lifetime of the guard.
template <class T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace draglora

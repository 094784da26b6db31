#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "lvp/tensor.hpp"

namespace lvp {

// Ordered record of executed differentiable operations. Nodes are appended
// as ops run, so inputs always precede the ops that consume them.
template <typename T>
class BasicTape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BasicTensor<T> output, BackwardFn fn) {
    nodes_.push_back(Node{std::move(output), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(root)/d(root) = 1 and runs every recorded backward rule once, in
  // reverse order. Interior gradients are reset first; leaf gradients
  // accumulate across calls.
  void backward(BasicTensor<T> root) {
    if (!root.defined() || root.numel() != 1) {
      throw UsageError("backward requires a scalar root, got " +
                       (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
    }
    for (auto& node : nodes_) {
      node.output.zero_grad();
      node.output.set_touched(false);
    }
    if (!root.requires_grad()) return;
    root.grad_mut()[0] += T(1);
    root.set_touched(true);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.touched()) continue;
      it->fn();
    }
  }

  static BasicTape*& active() {
    thread_local BasicTape* current = nullptr;
    return current;
  }

 private:
  struct Node {
    BasicTensor<T> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

template <typename T>
void backward(BasicTape<T>& tape, const BasicTensor<T>& root) {
  tape.backward(root);
}

// Routes ops executed in this scope onto `tape`.
template <typename T>
class BasicTapeScope {
 public:
  explicit BasicTapeScope(BasicTape<T>& tape) : previous_(BasicTape<T>::active()) {
    BasicTape<T>::active() = &tape;
  }
  ~BasicTapeScope() { BasicTape<T>::active() = previous_; }
  BasicTapeScope(const BasicTapeScope&) = delete;
  BasicTapeScope& operator=(const BasicTapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

// Disables recording for the enclosed ops.
template <typename T>
class BasicNoGradScope {
 public:
  BasicNoGradScope() : previous_(BasicTape<T>::active()) { BasicTape<T>::active() = nullptr; }
  ~BasicNoGradScope() { BasicTape<T>::active() = previous_; }
  BasicNoGradScope(const BasicNoGradScope&) = delete;
  BasicNoGradScope& operator=(const BasicNoGradScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

using TapeScope = BasicTapeScope<float>;
using NoGradScope = BasicNoGradScope<float>;

}  // namespace lvp

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "stpi/nn/tensor.hpp"

namespace stpi::nn {

// Raised when a forward or backward pass produces NaN/Inf. The message names
// the graph node (id and op) where the value first appeared.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Zero-filled gradient buffer, allocated on first use.
  Tensor& grad_buffer();
};

// Handle to a node of the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }
  std::uint64_t id() const { return node_->id; }
  const char* op() const { return node_->op; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an interior node. When no parent requires a gradient (or a NoGradGuard
// is active) the result is a constant and neither parents nor backward_fn are kept.
Var make_node(Tensor value, const std::vector<Var>& parents, const char* op,
              std::function<void(Node&)> backward_fn);

// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable node with requires_grad. A graph may be swept once; call
// reset_graph() before sweeping it again.
void backward(const Var& loss);
void reset_graph(const Var& loss);

}  // namespace stpi::nn

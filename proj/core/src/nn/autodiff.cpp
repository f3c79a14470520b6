#include "stpi/nn/autodiff.hpp"

#include <atomic>
#include <unordered_set>

namespace stpi::nn {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_mode = true;

std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
}

Var make_node(Tensor value, const std::vector<Var>& parents, const char* op,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  if (grad_mode) {
    for (const Var& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const Var& p : parents) node->parents.push_back(p.shared());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

bool grad_enabled() { return grad_mode; }

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  Node* root = loss.node();
  if (root->value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(root->value.shape()));
  }
  if (!all_finite(root->value)) {
    throw NonFiniteError("backward: non-finite loss at node #" + std::to_string(root->id) + " (" + root->op + ")");
  }
  if (root->consumed) throw std::logic_error("backward: graph already swept; call reset_graph first");
  if (!root->requires_grad) return;

  const std::vector<Node*> order = topological_order(root);
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    if (!all_finite(node->grad)) {
      throw NonFiniteError("backward: non-finite gradient at node #" + std::to_string(node->id) + " (" +
                           node->op + ")");
    }
    node->backward_fn(*node);
  }
  root->consumed = true;
}

void reset_graph(const Var& loss) {
  Node* root = loss.node();
  if (!root->requires_grad) {
    root->consumed = false;
    return;
  }
  for (Node* node : topological_order(root)) {
    if (node->backward_fn) node->grad = Tensor();
  }
  root->consumed = false;
}

}  // namespace stpi::nn

#include "fskws/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "fskws/error.hpp"

namespace fskws::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

template <typename Real>
Tensor<Real> Tensor<Real>::from_data(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw Error(Errc::ShapeMismatch, "shape " + to_string(shape) + " needs " +
                                         std::to_string(ad::numel(shape)) + " values, got " +
                                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw Error(Errc::NotScalar, "item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (!loss) throw Error(Errc::DetachedGraph, "empty tensor");
  if (loss.numel() != 1) {
    throw Error(Errc::NotScalar, "backward() needs a scalar loss, got " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error(Errc::DetachedGraph, "loss does not depend on any tensor that requires a gradient");
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  using NodePtr = Node<Real>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn();
  }
  // Interior records are released; leaves keep their accumulated grads.
  for (NodePtr node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
      node->requires_grad = false;
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace fskws::ad

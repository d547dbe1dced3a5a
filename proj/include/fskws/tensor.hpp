#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fskws::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  // Inputs of the op that produced this node; empty for leaves and after
  // the graph has been released by backward().
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this->grad into the inputs' grads.
  std::function<void()> backward_fn;

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

/// Shared handle to a dense row-major array that can take part in
/// reverse-mode differentiation. Copies alias the same storage.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<Real> v(ad::numel(shape), Real(0));
    return from_data(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<Real> values, bool requires_grad = false);

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  Real item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return !node_->backward_fn; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }
  void clear_grad() { node_->grad.clear(); }

  /// Value copy without graph history or gradient.
  Tensor detach() const { return from_data(shape(), node_->value, false); }

  const std::shared_ptr<Node<Real>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// While alive on the current thread, ops do not record backward graphs.
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

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient, then releases the graph. Calling it on a second loss adds to
/// the existing leaf gradients.
template <typename Real>
void backward(const Tensor<Real>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace fskws::ad

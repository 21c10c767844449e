#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "crossx/tensor.hpp"

namespace crossx {

/// Reverse-mode schedule for one scalar root: every node reachable from the
/// root that requires a gradient, in topological (creation) order.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<detail::Node<T>*>& nodes() const { return nodes_; }

  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, in reverse
  /// order. Gradients of intermediate nodes are reset first; leaf gradients
  /// accumulate.
  void backward();

 private:
  Tensor<T> root_;
  std::vector<detail::Node<T>*> nodes_;
};

/// Populates grads of every requires_grad leaf reachable from a scalar root.
template <typename T>
void backward(const Tensor<T>& root);

namespace detail {

// Builds an op result. The backward rule is kept only when some input needs a
// gradient, so inference-only graphs hold no history.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                      const char* op, std::function<void(Node<T>&)> rule) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->seq = next_node_sequence();
  bool needs = false;
  for (const auto& in : inputs) {
    needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error as used by every gradient check: |a-n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Central-difference check of d fn(x) / dx over every coordinate of x.
GradCheckResult grad_check(const std::function<Tensor64(const Tensor64&)>& fn, const Tensor64& x,
                           double h = 1e-5);

/// Finite-difference formula: the usual two-point central difference, or the
/// four-point central stencil (error O(h^4)) which tolerates a larger h and so
/// less cancellation noise when gradients are tiny.
enum class Stencil { kTwoPoint, kFourPoint };

/// Checks d fn() / d p for the given leaf tensors by perturbing them in place.
/// At most `max_coords_per_tensor` coordinates are probed per tensor, spread
/// evenly over the tensor; 0 probes every coordinate.
GradCheckResult grad_check_leaves(const std::function<Tensor64()>& fn, std::vector<Tensor64> leaves,
                                  double h = 1e-5, std::size_t max_coords_per_tensor = 0,
                                  Stencil stencil = Stencil::kTwoPoint);

}  // namespace crossx

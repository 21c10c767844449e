#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crossx/errors.hpp"

namespace crossx {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

std::uint64_t next_node_sequence();

// One vertex of the autodiff graph. Sequence numbers increase with creation
// order, so every node's inputs carry smaller sequence numbers than the node.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major tensor with an optional autodiff node.
///
/// A Tensor is a cheap shared handle: copies alias the same storage and graph
/// node. Values of non-leaf tensors must be treated as read-only.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_node(NodePtr node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> values() const;
  std::span<T> values_mut();
  /// Empty span when no gradient buffer exists (equivalent to all zeros).
  std::span<const T> grad() const;
  std::span<T> grad_mut();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// New leaf sharing no storage and no graph history.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), std::vector<T>(values().begin(), values().end()), requires_grad); }

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  void check_defined() const;

  NodePtr node_;
};

template <typename T>
using TensorList = std::vector<Tensor<T>>;

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

/// Throws NumericalError if any value is NaN or infinite.
template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace crossx

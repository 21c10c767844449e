#include "crossx/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace crossx {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : Tensor(std::move(shape), std::vector<T>{}, requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  check_extents(shape);
  const std::size_t n = shape_numel(shape);
  if (values.empty()) {
    values.assign(n, T(0));
  }
  if (values.size() != n) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->seq = detail::next_node_sequence();
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::check_defined() const {
  if (!node_) {
    throw ContractError("operation on an undefined tensor");
  }
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  check_defined();
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  check_defined();
  return node_->value.size();
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  check_defined();
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::values_mut() {
  check_defined();
  return node_->value;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  check_defined();
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  check_defined();
  if (node_->grad.size() != node_->value.size()) {
    node_->grad.assign(node_->value.size(), T(0));
  }
  return node_->grad;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  check_defined();
  return node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  check_defined();
  if (!node_->is_leaf()) {
    throw ContractError("requires_grad can only be changed on leaf tensors");
  }
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->value.size(), T(0));
  } else {
    node_->grad.clear();
  }
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  check_defined();
  return node_->is_leaf();
}

template <typename T>
void Tensor<T>::zero_grad() {
  check_defined();
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  check_defined();
  if (node_->value.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(node_->shape));
  }
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank mismatch for " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) {
      throw DimensionError("index out of range for " + shape_str(s));
    }
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  check_defined();
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
  if (!all_finite(t.values())) {
    throw NumericalError("non-finite value in " + what);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template void require_finite<float>(const Tensor<float>&, const std::string&);
template void require_finite<double>(const Tensor<double>&, const std::string&);

}  // namespace crossx

#include "crossx/autodiff.hpp"
#include "crossx/fault.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace crossx {

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward root must be a scalar tensor");
  }
  Tape tape;
  tape.root_ = root;
  if (!root.requires_grad()) {
    return tape;
  }
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    detail::Node<T>* node = stack.back();
    stack.pop_back();
    tape.nodes_.push_back(node);
    for (const auto& in : node->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        stack.push_back(in.get());
      }
    }
  }
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const detail::Node<T>* a, const detail::Node<T>* b) { return a->seq < b->seq; });
  return tape;
}

template <typename T>
void Tape<T>::backward() {
  if (nodes_.empty()) {
    return;
  }
  for (detail::Node<T>* node : nodes_) {
    if (!node->is_leaf()) {
      node->grad.assign(node->value.size(), T(0));
    } else if (node->grad.size() != node->value.size()) {
      node->grad.assign(node->value.size(), T(0));
    }
  }
  detail::Node<T>* root = root_.node().get();
  root->grad[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (!node->is_leaf()) {
      node->backward(*node);
    }
  }
}

template <typename T>
void backward(const Tensor<T>& root) {
  Tape<T>::record(root).backward();
}

template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void record(GradCheckResult& result, std::size_t index, double analytic, double numeric) {
  const double err = relative_error(analytic, numeric);
  if (result.coordinates == 0 || err > result.max_rel_error) {
    result.max_rel_error = err;
    result.worst_index = index;
    result.analytic_at_worst = analytic;
    result.numeric_at_worst = numeric;
  }
  ++result.coordinates;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor64(const Tensor64&)>& fn, const Tensor64& x,
                           double h) {
  Tensor64 probe = x.clone(true);
  Tensor64 out = fn(probe);
  backward(out);
  const std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  GradCheckResult result;
  auto values = probe.values_mut();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = fn(probe).item();
    values[i] = saved - h;
    const double down = fn(probe).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    record(result, i, analytic.empty() ? 0.0 : analytic[i], numeric);
  }
  return result;
}

GradCheckResult grad_check_leaves(const std::function<Tensor64()>& fn, std::vector<Tensor64> leaves,
                                  double h, std::size_t max_coords_per_tensor, Stencil stencil) {
  for (auto& leaf : leaves) {
    leaf.zero_grad();
  }
  backward(fn());

  GradCheckResult result;
  std::size_t offset = 0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.values_mut();
    const std::size_t n = values.size();
    const std::size_t probes = (max_coords_per_tensor == 0) ? n : std::min(n, max_coords_per_tensor);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = (probes == n) ? k : (k * n) / probes;
      const double saved = values[i];
      auto at = [&](double step) {
        values[i] = saved + step;
        return fn().item();
      };
      const double near = at(h) - at(-h);
      const double numeric = stencil == Stencil::kFourPoint
                                 ? (8.0 * near - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
                                 : near / (2.0 * h);
      values[i] = saved;
      record(result, offset + i, analytic.empty() ? 0.0 : analytic[i], numeric);
    }
    offset += n;
  }
  return result;
}

}  // namespace crossx

namespace crossx::fault {

namespace {
std::string& active_fault() {
  static std::string name;
  return name;
}
}  // namespace

void inject(std::string_view name) { active_fault() = std::string(name); }
void clear() { active_fault().clear(); }
bool active(std::string_view name) { return !active_fault().empty() && active_fault() == name; }

}  // namespace crossx::fault

#include "crossx/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crossx/autodiff.hpp"
#include "crossx/fault.hpp"
#include "crossx/ops.hpp"

namespace crossx {

using detail::make_result;
using detail::Node;

template <typename T>
CorrelationMatrix<T> correlation_matrix(const std::vector<Tensor<T>>& features) {
  if (features.empty()) {
    throw DimensionError("correlation_matrix: no excitation features");
  }
  const Shape& first = features.front().shape();
  if (first.size() != 2) {
    throw DimensionError("correlation_matrix: features must be [N x C], got " + shape_str(first));
  }
  std::vector<Tensor<T>> means;
  means.reserve(features.size());
  for (const auto& f : features) {
    if (f.shape() != first) {
      throw DimensionError("correlation_matrix: excitation features differ in shape, " + shape_str(f.shape()) +
                           " vs " + shape_str(first));
    }
    means.push_back(mean_rows(f));
  }
  // (1/N^2) sum_{i,j} <f_p,i, f_q,j> = <mean_i f_p,i, mean_j f_q,j>
  CorrelationMatrix<T> out;
  out.means = concat_rows(means);
  out.s = matmul(out.means, transpose(out.means));
  return out;
}

template <typename T>
Tensor<T> c3s_loss(const Tensor<T>& s) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
    throw DimensionError("c3s_loss: expected a square matrix, got " + shape_str(s.shape()));
  }
  const std::size_t p = s.dim(0);
  auto sv = s.values();
  T off = 0, diag = 0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const T v = sv[i * p + j];
      (i == j ? diag : off) += v * v;
    }
  }
  // 0.5 * (||S||_F^2 - 2 ||diag||^2) = 0.5 * (off-diagonal sq. sum - diagonal sq. sum)
  const T value = T(0.5) * (off - diag);
  return make_result<T>({1}, {value}, {s.node()}, "c3s_loss", [p](Node<T>& self) {
    auto& in = self.inputs[0];
    const T sign = fault::active("c3s_loss") ? T(-1) : T(1);
    const T g = sign * self.grad[0];
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        const T v = in->value[i * p + j];
        in->grad[i * p + j] += g * (i == j ? -v : v);
      }
    }
  });
}

namespace {

template <typename T>
void require_distributions(const Tensor<T>& probs, const char* what) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  auto pv = probs.values();
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = pv[r * k + j];
      if (!(v >= T(0))) {
        throw ContractError(std::string(what) + ": row " + std::to_string(r) + " has a negative or NaN entry");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& target, const Tensor<T>& prediction) {
  if (target.rank() != 2 || target.shape() != prediction.shape()) {
    throw DimensionError("kl_divergence: shapes " + shape_str(target.shape()) + " and " +
                         shape_str(prediction.shape()) + " must be equal [N x K]");
  }
  require_distributions(target, "kl_divergence target");
  require_distributions(prediction, "kl_divergence prediction");
  const std::size_t n = target.dim(0), k = target.dim(1);
  auto tv = target.values();
  auto pv = prediction.values();
  const T eps = static_cast<T>(kLogClamp);
  double total = 0.0;
  for (std::size_t i = 0; i < n * k; ++i) {
    if (tv[i] > T(0)) {
      total += static_cast<double>(tv[i]) * (std::log(static_cast<double>(tv[i])) -
                                             std::log(static_cast<double>(std::max(pv[i], eps))));
    }
  }
  const T value = static_cast<T>(total / static_cast<double>(n));
  return make_result<T>({1}, {value}, {target.node(), prediction.node()}, "kl_divergence",
                        [n, eps](Node<T>& self) {
                          auto& t = self.inputs[0];
                          auto& p = self.inputs[1];
                          const T g = self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < t->value.size(); ++i) {
                            const T tv = t->value[i];
                            const T pv = p->value[i];
                            if (t->requires_grad && tv > T(0)) {
                              t->grad[i] += g * (std::log(tv) + T(1) - std::log(std::max(pv, eps)));
                            }
                            if (p->requires_grad && pv > eps) {
                              p->grad[i] -= g * tv / pv;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for probabilities " +
                         shape_str(probs.shape()));
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  for (std::size_t label : idx) {
    if (label >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                          ")");
    }
  }
  auto pv = probs.values();
  const T eps = static_cast<T>(kLogClamp);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    total -= std::log(static_cast<double>(std::max(pv[r * k + idx[r]], eps)));
  }
  const T value = static_cast<T>(total / static_cast<double>(n));
  return make_result<T>({1}, {value}, {probs.node()}, "cross_entropy",
                        [n, k, eps, idx = std::move(idx)](Node<T>& self) {
                          auto& p = self.inputs[0];
                          const T g = self.grad[0] / static_cast<T>(n);
                          for (std::size_t r = 0; r < n; ++r) {
                            const T v = p->value[r * k + idx[r]];
                            if (v > eps) {
                              p->grad[r * k + idx[r]] -= g / v;
                            }
                          }
                        });
}

void LossWeights::validate() const {
  for (double w : {c3s_top, c3s_mid, c3s_merged, cl_mid, cl_merged, c3s_outer, cl_outer}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

template <typename T>
LossBreakdown<T> total_loss(const LossInputs<T>& in, const LossWeights& w, bool stop_target_gradient) {
  w.validate();
  require_finite(in.data, "data loss");
  LossBreakdown<T> out;
  out.data = in.data;
  Tensor<T> total = in.data;
  auto accumulate = [&total](const Tensor<T>& term, double weight) {
    if (weight != 0.0) {
      total = add(total, scale(term, static_cast<T>(weight)));
    }
  };
  if (in.s_top) {
    out.c3s_top = c3s_loss(*in.s_top);
    accumulate(*out.c3s_top, w.c3s_outer * w.c3s_top);
  }
  if (in.s_mid) {
    out.c3s_mid = c3s_loss(*in.s_mid);
    accumulate(*out.c3s_mid, w.c3s_outer * w.c3s_mid);
  }
  if (in.s_merged) {
    out.c3s_merged = c3s_loss(*in.s_merged);
    accumulate(*out.c3s_merged, w.c3s_outer * w.c3s_merged);
  }
  if (in.prob_top) {
    const Tensor<T> target = stop_target_gradient ? stop_gradient(*in.prob_top) : *in.prob_top;
    if (in.prob_mid) {
      out.kl_mid = kl_divergence(target, *in.prob_mid);
      accumulate(*out.kl_mid, w.cl_outer * w.cl_mid);
    }
    if (in.prob_merged) {
      out.kl_merged = kl_divergence(target, *in.prob_merged);
      accumulate(*out.kl_merged, w.cl_outer * w.cl_merged);
    }
  }
  require_finite(total, "total loss");
  out.total = total;
  return out;
}

#define CROSSX_INSTANTIATE_REG(T)                                                              \
  template CorrelationMatrix<T> correlation_matrix(const std::vector<Tensor<T>>&);            \
  template Tensor<T> c3s_loss(const Tensor<T>&);                                              \
  template Tensor<T> kl_divergence(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);           \
  template LossBreakdown<T> total_loss(const LossInputs<T>&, const LossWeights&, bool);

CROSSX_INSTANTIATE_REG(float)
CROSSX_INSTANTIATE_REG(double)

}  // namespace crossx

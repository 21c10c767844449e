#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "crossx/tensor.hpp"

namespace crossx {

inline constexpr double kLogClamp = 1e-8;

/// Cross-excitation correlation of one stage's pooled features.
template <typename T>
struct CorrelationMatrix {
  Tensor<T> s;      // [P x P]
  Tensor<T> means;  // [P x C], batch mean of each excitation's features
};

/// S[p][q] = (1/N^2) * sum over all N^2 sample pairs of <f_p,i, f_q,j>, computed
/// as the Gram matrix of per-excitation batch means.
template <typename T>
CorrelationMatrix<T> correlation_matrix(const std::vector<Tensor<T>>& features);

/// 0.5 * (||S||_F^2 - 2 ||diag S||^2): rewards same-excitation correlation and
/// penalizes cross-excitation correlation.
template <typename T>
Tensor<T> c3s_loss(const Tensor<T>& s);

/// Mean over rows of KL(target || prediction). Zero target entries contribute
/// nothing; prediction entries are clamped below at 1e-8.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& target, const Tensor<T>& prediction);

/// -(1/N) sum_n log Pr[n, label_n], with Pr clamped below at 1e-8.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels);

/// Weights of the full objective. The outer weights stay at 1; the per-stage
/// weights are the tuned hyper-parameters.
struct LossWeights {
  double c3s_top = 1.0;
  double c3s_mid = 1.0;
  double c3s_merged = 1.0;
  double cl_mid = 1.0;
  double cl_merged = 1.0;
  double c3s_outer = 1.0;
  double cl_outer = 1.0;

  void validate() const;

  bool operator==(const LossWeights&) const = default;
};

template <typename T>
struct LossInputs {
  Tensor<T> data;
  std::optional<Tensor<T>> s_top, s_mid, s_merged;
  std::optional<Tensor<T>> prob_top, prob_mid, prob_merged;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> data;
  std::optional<Tensor<T>> c3s_top, c3s_mid, c3s_merged;
  std::optional<Tensor<T>> kl_mid, kl_merged;  // KL(top || mid), KL(top || merged)
};

/// data + c3s_outer * sum_s w_s c3s(S_s) + cl_outer * sum_j w_j KL(Pr_top || Pr_j).
/// Components whose inputs are absent are skipped; components with zero weight
/// are reported but kept out of the total. With `stop_target_gradient` the
/// top-stage distribution acts as a fixed soft target.
template <typename T>
LossBreakdown<T> total_loss(const LossInputs<T>& inputs, const LossWeights& weights,
                            bool stop_target_gradient = false);

}  // namespace crossx

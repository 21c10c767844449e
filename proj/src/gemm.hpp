#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace crossx::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// C[m x n] (+)= op(A) * op(B) with row-major storage. op(A) is [m x k] and
// op(B) is [k x n]; a transposed operand is stored with swapped extents.
template <typename T>
void gemm(const T* a, bool trans_a, const T* b, bool trans_b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MapMat<T> out(c, M, N);
  if (!accumulate) {
    out.setZero();
  }
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMapMat<T>(a, M, K) * ConstMapMat<T>(b, K, N);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMapMat<T>(a, K, M).transpose() * ConstMapMat<T>(b, K, N);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMapMat<T>(a, M, K) * ConstMapMat<T>(b, N, K).transpose();
  } else {
    out.noalias() += ConstMapMat<T>(a, K, M).transpose() * ConstMapMat<T>(b, N, K).transpose();
  }
}

}  // namespace crossx::detail

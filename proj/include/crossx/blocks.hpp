#pragma once

#include <cstddef>
#include <vector>

#include "crossx/ops.hpp"
#include "crossx/random.hpp"
#include "crossx/tensor.hpp"

namespace crossx {

/// Uniform(-b, b) initialization with b = gain * sqrt(3 / fan_in). gain = sqrt(2)
/// for layers feeding a ReLU or batch norm, 1 otherwise.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, double gain, Rng& rng);

inline constexpr double kReluGain = 1.4142135623730951;

/// One-squeeze multi-excitation gating weights: one (squeeze, excite) pair per
/// excitation, applied to a shared channel descriptor. No bias terms.
template <typename T>
struct OsmeParams {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  std::vector<Tensor<T>> squeeze;  // [C/r x C] per excitation
  std::vector<Tensor<T>> excite;   // [C x C/r] per excitation

  std::size_t excitations() const { return squeeze.size(); }

  static OsmeParams init(std::size_t channels, std::size_t excitations, std::size_t reduction, Rng& rng);
};

template <typename T>
struct OsmeOutput {
  std::vector<Tensor<T>> maps;   // per excitation, [N x C x H x W]
  std::vector<Tensor<T>> gates;  // per excitation, [N x C], each in (0, 1)
};

/// z = GAP(U); m_p = sigmoid(E_p relu(S_p z)); U_p = m_p (.) U per channel.
template <typename T>
OsmeOutput<T> osme_forward(const Tensor<T>& u, const OsmeParams<T>& params);

/// Pools [N x C x H x W] to [N x C], then l2-normalizes rows iff `normalize`.
template <typename T>
Tensor<T> pooled_head(const Tensor<T>& u, PoolMode mode, bool normalize);

/// Pyramid merge parameters: 1x1 channel reduction of the top stage, 3x3
/// smoothing of the sum, then batch norm.
template <typename T>
struct FpnParams {
  Tensor<T> reduce;  // [C1 x C2 x 1 x 1]
  Tensor<T> smooth;  // [C1 x C1 x 3 x 3]
  Tensor<T> bn_gamma;
  Tensor<T> bn_beta;
  BatchNormState<T> bn;

  std::size_t out_channels() const { return reduce.dim(0); }
  std::size_t in_channels() const { return reduce.dim(1); }

  static FpnParams init(std::size_t top_channels, std::size_t mid_channels, Rng& rng);
};

/// BN(smooth * (mid + upsample2x(reduce * top))). `mid` must be exactly twice
/// the spatial size of `top`.
template <typename T>
Tensor<T> fpn_merge(const Tensor<T>& mid, const Tensor<T>& top, FpnParams<T>& params, Mode mode);

}  // namespace crossx

#include "crossx/blocks.hpp"

#include <cmath>
#include <string>

namespace crossx {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) {
    v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
OsmeParams<T> OsmeParams<T>::init(std::size_t channels, std::size_t excitations, std::size_t reduction,
                                  Rng& rng) {
  if (excitations < 1) {
    throw ConfigError("OSME needs at least one excitation");
  }
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("OSME channel count " + std::to_string(channels) + " is not divisible by reduction " +
                      std::to_string(reduction));
  }
  OsmeParams p;
  p.channels = channels;
  p.reduction = reduction;
  const std::size_t hidden = channels / reduction;
  for (std::size_t e = 0; e < excitations; ++e) {
    p.squeeze.push_back(fan_in_uniform<T>({hidden, channels}, channels, kReluGain, rng));
    p.excite.push_back(fan_in_uniform<T>({channels, hidden}, hidden, 1.0, rng));
  }
  return p;
}

template <typename T>
OsmeOutput<T> osme_forward(const Tensor<T>& u, const OsmeParams<T>& params) {
  if (u.rank() != 4 || u.dim(1) != params.channels) {
    throw DimensionError("osme_forward: input " + shape_str(u.shape()) + " does not have " +
                         std::to_string(params.channels) + " channels");
  }
  const Tensor<T> z = global_pool(u, PoolMode::kAverage);
  OsmeOutput<T> out;
  for (std::size_t e = 0; e < params.excitations(); ++e) {
    const Tensor<T> hidden = relu(matmul(z, transpose(params.squeeze[e])));
    Tensor<T> gate = sigmoid(matmul(hidden, transpose(params.excite[e])));
    out.maps.push_back(channel_scale(u, gate));
    out.gates.push_back(std::move(gate));
  }
  return out;
}

template <typename T>
Tensor<T> pooled_head(const Tensor<T>& u, PoolMode mode, bool normalize) {
  Tensor<T> pooled = global_pool(u, mode);
  return normalize ? l2_normalize(pooled) : pooled;
}

template <typename T>
FpnParams<T> FpnParams<T>::init(std::size_t top_channels, std::size_t mid_channels, Rng& rng) {
  FpnParams p;
  p.reduce = fan_in_uniform<T>({mid_channels, top_channels, 1, 1}, top_channels, 1.0, rng);
  p.smooth = fan_in_uniform<T>({mid_channels, mid_channels, 3, 3}, mid_channels * 9, kReluGain, rng);
  p.bn_gamma = Tensor<T>::full({mid_channels}, T(1), true);
  p.bn_beta = Tensor<T>::full({mid_channels}, T(0), true);
  p.bn = BatchNormState<T>(mid_channels);
  return p;
}

template <typename T>
Tensor<T> fpn_merge(const Tensor<T>& mid, const Tensor<T>& top, FpnParams<T>& params, Mode mode) {
  if (mid.rank() != 4 || top.rank() != 4 || mid.dim(0) != top.dim(0)) {
    throw DimensionError("fpn_merge: expected NCHW maps with equal batch, got " + shape_str(mid.shape()) +
                         " and " + shape_str(top.shape()));
  }
  if (mid.dim(2) != 2 * top.dim(2) || mid.dim(3) != 2 * top.dim(3)) {
    throw DimensionError("fpn_merge: spatial ratio must be exactly 2, got " + shape_str(mid.shape()) + " vs " +
                         shape_str(top.shape()));
  }
  if (top.dim(1) != params.in_channels() || mid.dim(1) != params.out_channels()) {
    throw DimensionError("fpn_merge: channel mismatch, params map " + std::to_string(params.in_channels()) +
                         " -> " + std::to_string(params.out_channels()) + " but maps are " +
                         shape_str(top.shape()) + " and " + shape_str(mid.shape()));
  }
  const Tensor<T> lateral = upsample_bilinear2x(conv2d(top, params.reduce, 1, 0));
  const Tensor<T> smoothed = conv2d(add(mid, lateral), params.smooth, 1, 1);
  return batch_norm(smoothed, params.bn_gamma, params.bn_beta, params.bn, mode);
}

#define CROSSX_INSTANTIATE_BLOCKS(T)                                                  \
  template Tensor<T> fan_in_uniform<T>(Shape, std::size_t, double, Rng&);            \
  template struct OsmeParams<T>;                                                     \
  template struct FpnParams<T>;                                                      \
  template OsmeOutput<T> osme_forward(const Tensor<T>&, const OsmeParams<T>&);       \
  template Tensor<T> pooled_head(const Tensor<T>&, PoolMode, bool);                  \
  template Tensor<T> fpn_merge(const Tensor<T>&, const Tensor<T>&, FpnParams<T>&, Mode);

CROSSX_INSTANTIATE_BLOCKS(float)
CROSSX_INSTANTIATE_BLOCKS(double)

}  // namespace crossx

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "crossx/tensor.hpp"

namespace crossx {

enum class Activation { kRelu, kSigmoid };
enum class PoolMode { kAverage, kMax };
enum class Mode { kTrain, kEval };

PoolMode parse_pool_mode(std::string_view text);
std::string_view to_string(PoolMode mode);

/// Running statistics for one batch-norm layer. Running variance uses the
/// unbiased batch estimate.
template <typename T>
struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}

  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// While alive, records on this thread how close any relu input or max-pooling
/// runner-up comes to a point where the op is not differentiable. Used to keep
/// finite-difference checks away from kinks.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  double margin() const { return margin_; }
  void observe(double distance) { margin_ = distance < margin_ ? distance : margin_; }

  static KinkProbe* current();

 private:
  double margin_;
  KinkProbe* previous_;
};

// Elementwise arithmetic (identical shapes).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Reductions to a scalar of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Same values, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Identity in the forward pass, blocks gradient flow.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a);

/// [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
/// Fully connected layer: x[N x D], weight[K x D], bias[K] -> x * weight^T + bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation with zero padding on NCHW input and [C' x C x kh x kw]
/// kernels. The output extent (H + 2 pad - kh) / stride + 1 must be exact.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

/// Spatial pooling [N x C x H x W] -> [N x C]. Max pooling routes the gradient
/// to the first maximal element in row-major order.
template <typename T>
Tensor<T> global_pool(const Tensor<T>& x, PoolMode mode);

/// x2 bilinear upsampling with half-pixel sampling (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x);

/// Per-channel batch normalization of NCHW input. Train mode normalizes with
/// batch statistics and updates `state`; eval mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode);

/// Divides each row of [N x C] by max(||row||_2, eps).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& f, double eps = 1e-12);

/// Row-wise softmax of [N x K], max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// u[N x C x H x W] scaled per (sample, channel) by m[N x C].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& u, const Tensor<T>& m);

/// Concatenates [N x C_i] blocks along columns.
template <typename T>
Tensor<T> concat_columns(const std::vector<Tensor<T>>& parts);

/// Concatenates [r_i x C] blocks along rows.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Column means of [N x C] as a [1 x C] row.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& f);

}  // namespace crossx

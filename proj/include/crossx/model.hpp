#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crossx/blocks.hpp"
#include "crossx/config.hpp"
#include "crossx/ops.hpp"
#include "crossx/tensor.hpp"

namespace crossx {

/// Shape-determining part of a configuration.
struct ModelSpec {
  std::size_t in_channels = 3;
  std::size_t image_size = 64;
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  std::size_t excitations = 2;
  std::size_t reduction = 16;
  std::size_t classes = 10;
  PoolMode mid_pooling = PoolMode::kMax;
  bool normalize_head_features = false;
  bool use_mid = true;
  bool use_merged = true;

  static ModelSpec from_config(const CrossXConfig& config);

  std::size_t stages() const { return stage_channels.size(); }
  std::size_t top_channels() const { return stage_channels.back(); }
  std::size_t mid_channels() const { return stage_channels[stage_channels.size() - 2]; }
  /// Spatial extent of the last stage for a square input of `size`.
  std::size_t top_extent(std::size_t size) const { return size >> stages(); }
};

/// conv -> BN -> ReLU.
template <typename T>
struct ConvBn {
  Tensor<T> kernel;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> bn;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

/// Fully connected classifier over concatenated pooled features.
template <typename T>
struct Head {
  Tensor<T> weight;  // [K x P*C]
  Tensor<T> bias;    // [K]
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Running statistics exposed for serialization.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct BackboneOutput {
  Tensor<T> mid;  // [N x C_{L-1} x 2h x 2w]
  Tensor<T> top;  // [N x C_L x h x w]
};

/// Everything one stage (last, penultimate, or merged) produces.
template <typename T>
struct StageOutput {
  std::vector<Tensor<T>> maps;        // per excitation, NCHW
  std::vector<Tensor<T>> gates;       // per excitation [N x C]; empty for merged maps
  std::vector<Tensor<T>> pooled;      // per excitation [N x C], raw pooled features
  std::vector<Tensor<T>> normalized;  // per excitation [N x C], l2-normalized
  Tensor<T> logits;                   // [N x K]
};

template <typename T>
struct ForwardOutput {
  BackboneOutput<T> backbone;
  StageOutput<T> top;
  std::optional<StageOutput<T>> mid;
  std::optional<StageOutput<T>> merged;
};

enum class Stage { kTop, kMid, kMerged };
std::string_view to_string(Stage stage);

/// Toy staged CNN with OSME blocks on its last two stages, a pyramid merge and
/// one classifier per stage.
template <typename T>
class CrossXModel {
 public:
  CrossXModel() = default;
  /// Deterministic initialization from `seed`. Double and single precision
  /// models built from the same seed hold the same values up to rounding.
  CrossXModel(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  BackboneOutput<T> backbone_forward(const Tensor<T>& x, Mode mode);
  ForwardOutput<T> forward(const Tensor<T>& x, Mode mode);

  /// Trainable tensors in a fixed order with stable names.
  std::vector<NamedTensor<T>> parameters();
  /// Batch-norm running statistics in a fixed order with stable names.
  std::vector<NamedBuffer<T>> buffers();

  std::size_t parameter_count();

 private:
  StageOutput<T> stage_head(std::vector<Tensor<T>> maps, std::vector<Tensor<T>> gates, PoolMode pool,
                            const Head<T>& head) const;

  ModelSpec spec_;
  std::vector<std::vector<ConvBn<T>>> stages_;
  OsmeParams<T> osme_top_;
  std::optional<OsmeParams<T>> osme_mid_;
  std::optional<FpnParams<T>> fpn_;
  Head<T> head_top_;
  std::optional<Head<T>> head_mid_;
  std::optional<Head<T>> head_merged_;
};

/// softmax of the sum of the available logits.
template <typename T>
Tensor<T> combined_prediction(const std::vector<Tensor<T>>& logits);

template <typename T>
Tensor<T> combined_prediction(const ForwardOutput<T>& out);

}  // namespace crossx

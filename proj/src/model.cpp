#include "crossx/model.hpp"

#include <string>

namespace crossx {

ModelSpec ModelSpec::from_config(const CrossXConfig& config) {
  ModelSpec s;
  s.image_size = config.data.image_size;
  s.stage_channels = config.stage_channels;
  s.blocks_per_stage = config.blocks_per_stage;
  s.excitations = config.excitations;
  s.reduction = config.reduction;
  s.classes = config.data.classes;
  s.mid_pooling = config.mid_pooling;
  s.normalize_head_features = config.normalize_head_features;
  s.use_mid = config.use_mid;
  s.use_merged = config.use_merged;
  return s;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kTop: return "top";
    case Stage::kMid: return "mid";
    case Stage::kMerged: return "merged";
  }
  return "?";
}

namespace {

template <typename T>
ConvBn<T> make_conv_bn(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                       Rng& rng) {
  ConvBn<T> c;
  c.kernel = fan_in_uniform<T>({out, in, k, k}, in * k * k, kReluGain, rng);
  c.gamma = Tensor<T>::full({out}, T(1), true);
  c.beta = Tensor<T>::full({out}, T(0), true);
  c.bn = BatchNormState<T>(out);
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename T>
Head<T> make_head(std::size_t in, std::size_t classes, Rng& rng) {
  return {fan_in_uniform<T>({classes, in}, in, 1.0, rng), Tensor<T>({classes}, true)};
}

}  // namespace

template <typename T>
CrossXModel<T>::CrossXModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.stages() < 2) {
    throw ConfigError("the backbone needs at least two stages");
  }
  if (spec.top_channels() != 2 * spec.mid_channels()) {
    throw ConfigError("the last stage must have twice the channels of the penultimate stage");
  }
  if (spec.use_merged && !spec.use_mid) {
    throw ConfigError("merged features require the penultimate-stage branch");
  }
  if (spec.blocks_per_stage < 1) {
    throw ConfigError("blocks_per_stage must be at least 1");
  }
  Rng backbone_rng = Rng::derive(seed, {1});
  std::size_t in = spec.in_channels;
  for (std::size_t c : spec.stage_channels) {
    std::vector<ConvBn<T>> blocks;
    // Stride-2 entry: 4x4 kernel, pad 1 halves even extents exactly.
    blocks.push_back(make_conv_bn<T>(in, c, 4, 2, 1, backbone_rng));
    for (std::size_t b = 1; b < spec.blocks_per_stage; ++b) {
      blocks.push_back(make_conv_bn<T>(c, c, 3, 1, 1, backbone_rng));
    }
    stages_.push_back(std::move(blocks));
    in = c;
  }
  const std::size_t p = spec.excitations;
  Rng osme_rng = Rng::derive(seed, {2});
  osme_top_ = OsmeParams<T>::init(spec.top_channels(), p, spec.reduction, osme_rng);
  Rng head_rng = Rng::derive(seed, {4});
  head_top_ = make_head<T>(p * spec.top_channels(), spec.classes, head_rng);
  if (spec.use_mid) {
    osme_mid_ = OsmeParams<T>::init(spec.mid_channels(), p, spec.reduction, osme_rng);
    head_mid_ = make_head<T>(p * spec.mid_channels(), spec.classes, head_rng);
  }
  if (spec.use_merged) {
    Rng fpn_rng = Rng::derive(seed, {3});
    fpn_ = FpnParams<T>::init(spec.top_channels(), spec.mid_channels(), fpn_rng);
    head_merged_ = make_head<T>(p * spec.mid_channels(), spec.classes, head_rng);
  }
}

template <typename T>
BackboneOutput<T> CrossXModel<T>::backbone_forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw DimensionError("backbone_forward: expected [N x " + std::to_string(spec_.in_channels) +
                         " x H x W] input, got " + shape_str(x.shape()));
  }
  const std::size_t factor = std::size_t{1} << spec_.stages();
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw DimensionError("backbone_forward: input extent " + shape_str(x.shape()) +
                         " is not divisible by the total stride " + std::to_string(factor));
  }
  BackboneOutput<T> out;
  Tensor<T> h = x;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) {
      h = relu(batch_norm(conv2d(h, block.kernel, block.stride, block.pad), block.gamma, block.beta, block.bn, mode));
    }
    if (s + 2 == stages_.size()) out.mid = h;
  }
  out.top = h;
  return out;
}

template <typename T>
StageOutput<T> CrossXModel<T>::stage_head(std::vector<Tensor<T>> maps, std::vector<Tensor<T>> gates, PoolMode pool,
                                          const Head<T>& head) const {
  StageOutput<T> out;
  out.maps = std::move(maps);
  out.gates = std::move(gates);
  for (const auto& m : out.maps) {
    out.pooled.push_back(global_pool(m, pool));
    out.normalized.push_back(l2_normalize(out.pooled.back()));
  }
  const Tensor<T> features = concat_columns(spec_.normalize_head_features ? out.normalized : out.pooled);
  out.logits = linear(features, head.weight, head.bias);
  return out;
}

template <typename T>
ForwardOutput<T> CrossXModel<T>::forward(const Tensor<T>& x, Mode mode) {
  ForwardOutput<T> out;
  out.backbone = backbone_forward(x, mode);
  auto top = osme_forward(out.backbone.top, osme_top_);
  if (osme_mid_) {
    auto mid = osme_forward(out.backbone.mid, *osme_mid_);
    if (fpn_) {
      std::vector<Tensor<T>> merged;
      for (std::size_t p = 0; p < spec_.excitations; ++p) {
        merged.push_back(fpn_merge(mid.maps[p], top.maps[p], *fpn_, mode));
      }
      out.merged = stage_head(std::move(merged), {}, PoolMode::kAverage, *head_merged_);
    }
    out.mid = stage_head(std::move(mid.maps), std::move(mid.gates), spec_.mid_pooling, *head_mid_);
  }
  out.top = stage_head(std::move(top.maps), std::move(top.gates), PoolMode::kAverage, head_top_);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> CrossXModel<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      out.push_back({prefix + "kernel", stages_[s][b].kernel});
      out.push_back({prefix + "bn_gamma", stages_[s][b].gamma});
      out.push_back({prefix + "bn_beta", stages_[s][b].beta});
    }
  }
  auto add_osme = [&](const std::string& prefix, const OsmeParams<T>& o) {
    for (std::size_t p = 0; p < o.excitations(); ++p) {
      out.push_back({prefix + ".squeeze" + std::to_string(p), o.squeeze[p]});
      out.push_back({prefix + ".excite" + std::to_string(p), o.excite[p]});
    }
  };
  auto add_head = [&](const std::string& prefix, const Head<T>& h) {
    out.push_back({prefix + ".weight", h.weight});
    out.push_back({prefix + ".bias", h.bias});
  };
  add_osme("osme_top", osme_top_);
  add_head("head_top", head_top_);
  if (osme_mid_) {
    add_osme("osme_mid", *osme_mid_);
    add_head("head_mid", *head_mid_);
  }
  if (fpn_) {
    out.push_back({"fpn.reduce", fpn_->reduce});
    out.push_back({"fpn.smooth", fpn_->smooth});
    out.push_back({"fpn.bn_gamma", fpn_->bn_gamma});
    out.push_back({"fpn.bn_beta", fpn_->bn_beta});
    add_head("head_merged", *head_merged_);
  }
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> CrossXModel<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      out.push_back({prefix + "bn_running_mean", &stages_[s][b].bn.running_mean});
      out.push_back({prefix + "bn_running_var", &stages_[s][b].bn.running_var});
    }
  }
  if (fpn_) {
    out.push_back({"fpn.bn_running_mean", &fpn_->bn.running_mean});
    out.push_back({"fpn.bn_running_var", &fpn_->bn.running_var});
  }
  return out;
}

template <typename T>
std::size_t CrossXModel<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
Tensor<T> combined_prediction(const std::vector<Tensor<T>>& logits) {
  if (logits.empty()) {
    throw DimensionError("combined_prediction: no logits");
  }
  Tensor<T> total = logits.front();
  for (std::size_t i = 1; i < logits.size(); ++i) {
    total = add(total, logits[i]);
  }
  return softmax(total);
}

template <typename T>
Tensor<T> combined_prediction(const ForwardOutput<T>& out) {
  std::vector<Tensor<T>> logits{out.top.logits};
  if (out.mid) logits.push_back(out.mid->logits);
  if (out.merged) logits.push_back(out.merged->logits);
  return combined_prediction(logits);
}

template class CrossXModel<float>;
template class CrossXModel<double>;
template Tensor<float> combined_prediction(const std::vector<Tensor<float>>&);
template Tensor<double> combined_prediction(const std::vector<Tensor<double>>&);
template Tensor<float> combined_prediction(const ForwardOutput<float>&);
template Tensor<double> combined_prediction(const ForwardOutput<double>&);

}  // namespace crossx

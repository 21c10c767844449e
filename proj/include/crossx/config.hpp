#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crossx/ops.hpp"
#include "crossx/regularizers.hpp"
#include "crossx/synth.hpp"

namespace crossx {

/// Every tunable of a run. Serialized as flat `key = value` lines; see
/// `config_keys()` for the documented key set.
struct CrossXConfig {
  // Architecture.
  std::size_t excitations = 2;
  std::size_t reduction = 16;
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  PoolMode mid_pooling = PoolMode::kMax;
  bool normalize_head_features = false;

  // Ablation toggles.
  bool use_c3s = true;
  bool use_mid = true;
  bool use_merged = true;
  bool use_cl = true;

  // Objective.
  LossWeights weights;
  bool kl_stop_gradient = false;

  // Optimizer and schedule.
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t decay_period = 15;
  double decay_factor = 0.1;
  double flip_probability = 0.5;
  std::uint64_t seed = 1;

  // Data.
  SynthSpec data;
  std::uint64_t data_seed = 7;
  bool export_dataset = false;

  // Ablation matrix.
  std::size_t ablation_seeds = 5;

  /// Throws ConfigError on out-of-range values or inconsistent toggles.
  void validate() const;

  /// Weights after ablation toggles: disabled regularizers weigh zero.
  LossWeights effective_weights() const;

  /// Canonical `key = value` text in documented key order.
  std::string to_text() const;

  /// FNV-1a digest of the keys that determine the parameter layout.
  std::uint64_t model_digest() const;

  bool operator==(const CrossXConfig&) const = default;
};

struct ConfigKey {
  std::string name;
  std::string doc;
};

/// Documented keys, in canonical order.
const std::vector<ConfigKey>& config_keys();

/// Applies one `key = value` assignment. Unknown keys and unparsable values
/// throw ConfigError naming the key.
void apply_setting(CrossXConfig& config, std::string_view key, std::string_view value);

/// Applies `key=value` (whitespace around '=' allowed).
void apply_override(CrossXConfig& config, std::string_view assignment);

/// Parses configuration text on top of `base`. '#' starts a comment.
CrossXConfig parse_config(std::string_view text, CrossXConfig base = {});

CrossXConfig load_config(const std::filesystem::path& path);

/// Named presets: `desk` (the defaults above) and `<dataset>-<backbone>-desk`
/// for dataset in {nabirds, cub, cars, dogs, aircraft} and backbone in {senet,
/// resnet}. The per-dataset hyper-parameters follow the published tuning
/// tables; the rest is desk scale.
const std::vector<std::string>& preset_names();
CrossXConfig preset(std::string_view name);
bool is_preset(std::string_view name);

/// A preset name, or else a config file path.
CrossXConfig resolve_config(const std::string& name_or_path);

}  // namespace crossx

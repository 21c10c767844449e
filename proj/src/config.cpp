#include "crossx/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace crossx {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "' (expected " +
                    expected + ")");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_size(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i]);
  }
  return out;
}

struct KeyHandler {
  ConfigKey key;
  std::function<std::string(const CrossXConfig&)> get;
  std::function<void(CrossXConfig&, std::string_view)> set;
};

#define SIZE_KEY(name, field, doc)                                                       \
  KeyHandler{{name, doc}, [](const CrossXConfig& c) { return std::to_string(c.field); }, \
             [](CrossXConfig& c, std::string_view v) { c.field = parse_size(name, v); }}
#define U64_KEY(name, field, doc)                                                        \
  KeyHandler{{name, doc}, [](const CrossXConfig& c) { return std::to_string(c.field); }, \
             [](CrossXConfig& c, std::string_view v) { c.field = parse_u64(name, v); }}
#define DOUBLE_KEY(name, field, doc)                                                  \
  KeyHandler{{name, doc}, [](const CrossXConfig& c) { return fmt_double(c.field); }, \
             [](CrossXConfig& c, std::string_view v) { c.field = parse_double(name, v); }}
#define BOOL_KEY(name, field, doc)                                                  \
  KeyHandler{{name, doc}, [](const CrossXConfig& c) { return fmt_bool(c.field); }, \
             [](CrossXConfig& c, std::string_view v) { c.field = parse_bool(name, v); }}

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = {
      SIZE_KEY("excitations", excitations, "excitation modules per OSME block"),
      SIZE_KEY("reduction", reduction, "OSME gating reduction ratio"),
      KeyHandler{{"stage_channels", "backbone channels per stage, comma separated"},
                 [](const CrossXConfig& c) { return fmt_list(c.stage_channels); },
                 [](CrossXConfig& c, std::string_view v) { c.stage_channels = parse_list("stage_channels", v); }},
      SIZE_KEY("blocks_per_stage", blocks_per_stage, "conv-BN-ReLU blocks per backbone stage"),
      KeyHandler{{"mid_pooling", "pooling of the penultimate stage: gap or gmp"},
                 [](const CrossXConfig& c) { return std::string(to_string(c.mid_pooling)); },
                 [](CrossXConfig& c, std::string_view v) { c.mid_pooling = parse_pool_mode(v); }},
      BOOL_KEY("normalize_head_features", normalize_head_features, "l2-normalize classifier inputs"),
      BOOL_KEY("use_c3s", use_c3s, "enable the cross-semantic correlation regularizer"),
      BOOL_KEY("use_mid", use_mid, "OSME and classifier head on the penultimate stage"),
      BOOL_KEY("use_merged", use_merged, "pyramid-merged feature maps and their head"),
      BOOL_KEY("use_cl", use_cl, "enable the cross-layer KL regularizer"),
      DOUBLE_KEY("gamma1", weights.c3s_top, "C3S weight, last stage"),
      DOUBLE_KEY("gamma2", weights.c3s_mid, "C3S weight, penultimate stage"),
      DOUBLE_KEY("gamma3", weights.c3s_merged, "C3S weight, merged maps"),
      DOUBLE_KEY("lambda1", weights.cl_mid, "KL weight, last vs penultimate stage"),
      DOUBLE_KEY("lambda2", weights.cl_merged, "KL weight, last stage vs merged maps"),
      BOOL_KEY("kl_stop_gradient", kl_stop_gradient, "treat the last-stage distribution as a fixed target"),
      DOUBLE_KEY("lr", lr, "initial learning rate"),
      DOUBLE_KEY("momentum", momentum, "SGD momentum"),
      DOUBLE_KEY("weight_decay", weight_decay, "L2 weight decay added to gradients"),
      SIZE_KEY("batch_size", batch_size, "mini-batch size (at least 2)"),
      SIZE_KEY("epochs", epochs, "training epochs"),
      SIZE_KEY("decay_period", decay_period, "epochs between learning-rate decays"),
      DOUBLE_KEY("decay_factor", decay_factor, "learning-rate decay factor"),
      DOUBLE_KEY("flip_probability", flip_probability, "horizontal flip probability for training batches"),
      U64_KEY("seed", seed, "initialization and batch-order seed"),
      SIZE_KEY("classes", data.classes, "number of synthetic classes"),
      SIZE_KEY("image_size", data.image_size, "square image side in pixels"),
      SIZE_KEY("train_per_class", data.train_per_class, "training images per class (before validation carve)"),
      SIZE_KEY("val_per_class", data.val_per_class, "validation images per class; 0 carves 10% of train"),
      SIZE_KEY("test_per_class", data.test_per_class, "test images per class"),
      BOOL_KEY("fine_grained", data.fine_grained, "classes differ only by a local texture patch"),
      DOUBLE_KEY("noise", data.noise, "pixel noise standard deviation"),
      DOUBLE_KEY("patch_contrast", data.patch_contrast, "amplitude of the class texture patch"),
      U64_KEY("data_seed", data_seed, "synthetic dataset seed"),
      BOOL_KEY("export_dataset", export_dataset, "write the test split as images.bin + labels.csv"),
      SIZE_KEY("ablation_seeds", ablation_seeds, "seeds per ablation cell"),
  };
  return table;
}

#undef SIZE_KEY
#undef U64_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

struct PresetRow {
  const char* dataset;
  std::size_t excitations;
  double gamma1, gamma2, gamma3;
  double lambda1, lambda2;
};

// Tuned hyper-parameters per dataset and backbone.
constexpr PresetRow kSenetRows[] = {
    {"nabirds", 2, 0.1, 0.25, 0.5, 1, 1}, {"cub", 2, 1, 0.25, 1, 1, 1},       {"cars", 2, 1, 0.25, 1, 1, 1},
    {"dogs", 3, 1, 0.5, 1, 1, 1},         {"aircraft", 2, 0.5, 0.1, 0.1, 1, 1},
};
constexpr PresetRow kResnetRows[] = {
    {"nabirds", 2, 0.5, 0.25, 0.5, 1, 1}, {"cub", 2, 0.5, 0.25, 0.5, 1, 1},   {"cars", 2, 1, 0.25, 1, 1, 1},
    {"dogs", 2, 0.01, 0.01, 1, 1, 1},     {"aircraft", 2, 0.5, 0.1, 0.5, 1, 1},
};

CrossXConfig from_row(const PresetRow& row) {
  CrossXConfig c;
  c.excitations = row.excitations;
  c.weights.c3s_top = row.gamma1;
  c.weights.c3s_mid = row.gamma2;
  c.weights.c3s_merged = row.gamma3;
  c.weights.cl_mid = row.lambda1;
  c.weights.cl_merged = row.lambda2;
  const std::string_view ds = row.dataset;
  // Birds use max pooling on the penultimate stage, the others average pooling.
  c.mid_pooling = (ds == "nabirds" || ds == "cub") ? PoolMode::kMax : PoolMode::kAverage;
  if (ds == "dogs") {
    c.lr = 0.001;
  }
  return c;
}

}  // namespace

void CrossXConfig::validate() const {
  if (excitations < 1) throw ConfigError("excitations must be at least 1");
  if (reduction < 1) throw ConfigError("reduction must be at least 1");
  if (stage_channels.size() < 2) throw ConfigError("stage_channels needs at least two stages");
  if (std::find(stage_channels.begin(), stage_channels.end(), 0u) != stage_channels.end()) {
    throw ConfigError("stage_channels entries must be positive");
  }
  const std::size_t top = stage_channels.back();
  const std::size_t mid = stage_channels[stage_channels.size() - 2];
  if (top != 2 * mid) {
    throw ConfigError("the last stage must have exactly twice the channels of the penultimate stage");
  }
  if (top % reduction != 0 || mid % reduction != 0) {
    throw ConfigError("channels of the last two stages must be divisible by reduction");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be at least 1");
  const std::size_t factor = std::size_t{1} << stage_channels.size();
  if (data.image_size % factor != 0) {
    throw ConfigError("image_size " + std::to_string(data.image_size) + " is not divisible by the total stride " +
                      std::to_string(factor));
  }
  if (data.classes < 2) throw ConfigError("classes must be at least 2");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for batch normalization");
  if (decay_period < 1) throw ConfigError("decay_period must be at least 1");
  if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0) || !(decay_factor > 0.0)) {
    throw ConfigError("optimizer settings out of range");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("flip_probability must lie in [0, 1]");
  }
  weights.validate();
  if (use_cl && !use_mid) throw ConfigError("use_cl requires use_mid (a second head to match)");
  if (use_merged && !use_mid) throw ConfigError("use_merged requires use_mid (merging needs penultimate OSME maps)");
  if (ablation_seeds < 1) throw ConfigError("ablation_seeds must be at least 1");
}

LossWeights CrossXConfig::effective_weights() const {
  LossWeights w = weights;
  if (!use_c3s) w.c3s_top = w.c3s_mid = w.c3s_merged = 0.0;
  if (!use_mid) w.c3s_mid = w.cl_mid = 0.0;
  if (!use_merged) w.c3s_merged = w.cl_merged = 0.0;
  if (!use_cl) w.cl_mid = w.cl_merged = 0.0;
  return w;
}

std::string CrossXConfig::to_text() const {
  std::ostringstream os;
  for (const auto& h : handlers()) {
    os << h.key.name << " = " << h.get(*this) << '\n';
  }
  return os.str();
}

std::uint64_t CrossXConfig::model_digest() const {
  static constexpr std::string_view kModelKeys[] = {"excitations", "reduction",    "stage_channels",
                                                     "blocks_per_stage", "mid_pooling", "normalize_head_features",
                                                     "use_mid",     "use_merged",   "classes",
                                                     "image_size"};
  std::string canonical;
  for (const auto& h : handlers()) {
    if (std::find(std::begin(kModelKeys), std::end(kModelKeys), h.key.name) != std::end(kModelKeys)) {
      canonical += h.key.name + "=" + h.get(*this) + "\n";
    }
  }
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& h : handlers()) out.push_back(h.key);
    return out;
  }();
  return keys;
}

void apply_setting(CrossXConfig& config, std::string_view key, std::string_view value) {
  for (const auto& h : handlers()) {
    if (h.key.name == key) {
      h.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_override(CrossXConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

CrossXConfig parse_config(std::string_view text, CrossXConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = (nl == std::string_view::npos) ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

CrossXConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out{"desk"};
    for (const auto& row : kSenetRows) out.push_back(std::string(row.dataset) + "-senet-desk");
    for (const auto& row : kResnetRows) out.push_back(std::string(row.dataset) + "-resnet-desk");
    return out;
  }();
  return names;
}

bool is_preset(std::string_view name) {
  const auto& names = preset_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

CrossXConfig preset(std::string_view name) {
  if (name == "desk") return CrossXConfig{};
  for (const auto& row : kSenetRows) {
    if (name == std::string(row.dataset) + "-senet-desk") return from_row(row);
  }
  for (const auto& row : kResnetRows) {
    if (name == std::string(row.dataset) + "-resnet-desk") return from_row(row);
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

CrossXConfig resolve_config(const std::string& name_or_path) {
  if (std::filesystem::exists(name_or_path)) {
    return load_config(name_or_path);
  }
  if (is_preset(name_or_path)) {
    return preset(name_or_path);
  }
  throw ConfigError("cannot read config '" + name_or_path + "': neither a file nor a preset name");
}

}  // namespace crossx

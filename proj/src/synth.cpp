#include "crossx/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "crossx/binary_io.hpp"

namespace crossx {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum Split : std::uint64_t { kTrainSplit = 1, kValSplit = 2, kTestSplit = 3 };

double sign_of(double v) { return v >= 0.0 ? 1.0 : -1.0; }

std::array<double, 3> hue_color(double hue) {
  // Fully saturated hue at value 0.75, mixed towards grey.
  const double h = hue * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(h) % 6) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  for (double& c : rgb) c = 0.25 + 0.5 * c;
  return rgb;
}

constexpr int kDistractors = 3;

// Texture value in {-1, +1} for class `label` at patch coordinates (u, v).
// Every pattern is mirror-symmetric in distribution under a horizontal flip.
double texture(std::size_t label, double u, double v, double phase_a, double phase_b) {
  const double period = 6.0 + 2.0 * static_cast<double>(label / 10);
  switch (label % 5) {
    case 0: return sign_of(std::sin(kTwoPi * v / period + phase_a));
    case 1: return sign_of(std::sin(kTwoPi * u / period + phase_a));
    case 2: return sign_of(std::sin(kTwoPi * u / period + phase_a) * std::sin(kTwoPi * v / period + phase_b));
    case 3: return sign_of(std::sin(kTwoPi * v / (2.0 * period) + phase_a));
    default: return sign_of(std::sin(kTwoPi * u / (2.0 * period) + phase_a));
  }
}

std::array<double, 3> modulation(std::size_t label) {
  return ((label / 5) % 2 == 0) ? std::array<double, 3>{1.0, 0.2, -0.6} : std::array<double, 3>{-0.6, 0.2, 1.0};
}

void render(const SynthSpec& spec, std::size_t label, Rng& rng, std::uint8_t* out) {
  const std::size_t s = spec.image_size;
  const double sd = static_cast<double>(s);
  std::vector<double> img(3 * s * s);

  std::array<double, 3> background{};
  for (double& c : background) c = rng.uniform(0.35, 0.65);
  const double grad_x = rng.uniform(-0.15, 0.15);
  const double grad_y = rng.uniform(-0.15, 0.15);

  const double cx = sd / 2.0 + rng.uniform(-sd / 8.0, sd / 8.0);
  const double cy = sd / 2.0 + rng.uniform(-sd / 8.0, sd / 8.0);
  double axis_a = sd * rng.uniform(0.22, 0.32);
  double axis_b = sd * rng.uniform(0.16, 0.26);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  std::array<double, 3> body{};
  for (double& c : body) c = rng.uniform(0.3, 0.7);
  if (!spec.fine_grained) {
    const auto base = hue_color(static_cast<double>(label) / static_cast<double>(spec.classes));
    for (std::size_t c = 0; c < 3; ++c) body[c] = base[c] + rng.uniform(-0.04, 0.04);
    const double aspect = 0.45 + 0.5 * static_cast<double>(label % 5) / 4.0;
    axis_b = axis_a * aspect;
  }
  const double ca = std::cos(angle), sa = std::sin(angle);

  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double fx = static_cast<double>(x) + 0.5, fy = static_cast<double>(y) + 0.5;
      const double dx = fx - cx, dy = fy - cy;
      const double rx = (dx * ca + dy * sa) / axis_a;
      const double ry = (-dx * sa + dy * ca) / axis_b;
      const bool inside = rx * rx + ry * ry <= 1.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = background[c] + grad_x * (fx / sd - 0.5) + grad_y * (fy / sd - 0.5);
        img[(c * s + y) * s + x] = inside ? body[c] : bg;
      }
    }
  }

  const std::size_t patch = std::max<std::size_t>(4, s / 4);
  const double max_origin = static_cast<double>(s - patch);

  // Distractor patches: diagonal stripes no class uses, anywhere in the frame, under the class patch.
  for (int k = 0; k < kDistractors; ++k) {
    const auto qx = static_cast<std::size_t>(std::min(max_origin, std::floor(rng.uniform(0.0, max_origin + 1.0))));
    const auto qy = static_cast<std::size_t>(std::min(max_origin, std::floor(rng.uniform(0.0, max_origin + 1.0))));
    const double phase = rng.uniform(0.0, kTwoPi);
    const double slope = rng.uniform(0.0, 1.0) < 0.5 ? 1.0 : -1.0;
    std::array<double, 3> tint{};
    for (double& c : tint) c = rng.uniform(-1.0, 1.0);
    for (std::size_t v = 0; v < patch; ++v) {
      for (std::size_t u = 0; u < patch; ++u) {
        const double t = sign_of(std::sin(kTwoPi * (static_cast<double>(u) + slope * static_cast<double>(v)) / 6.0 + phase));
        for (std::size_t c = 0; c < 3; ++c) img[(c * s + qy + v) * s + qx + u] += spec.patch_contrast * t * tint[c];
      }
    }
  }

  const double phase_a = rng.uniform(0.0, kTwoPi);
  const double phase_b = rng.uniform(0.0, kTwoPi);
  const double px_center = cx + rng.uniform(-0.5, 0.5) * axis_a;
  const double py_center = cy + rng.uniform(-0.5, 0.5) * axis_b;
  const auto ox = static_cast<std::size_t>(std::clamp(std::round(px_center - patch / 2.0), 0.0, max_origin));
  const auto oy = static_cast<std::size_t>(std::clamp(std::round(py_center - patch / 2.0), 0.0, max_origin));
  const auto mod = modulation(label);
  for (std::size_t v = 0; v < patch; ++v) {
    for (std::size_t u = 0; u < patch; ++u) {
      const double t = texture(label, static_cast<double>(u), static_cast<double>(v), phase_a, phase_b);
      for (std::size_t c = 0; c < 3; ++c) {
        img[(c * s + oy + v) * s + ox + u] += spec.patch_contrast * t * mod[c];
      }
    }
  }

  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i] + spec.noise * rng.normal(), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

ImageSet make_split(const SynthSpec& spec, std::uint64_t seed, Split split, std::size_t per_class,
                    std::size_t first_index) {
  ImageSet set;
  set.height = set.width = spec.image_size;
  const std::size_t count = per_class * spec.classes;
  set.pixels.resize(count * set.image_bytes());
  set.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % spec.classes;
    const std::size_t index = first_index + i / spec.classes;
    Rng rng = Rng::derive(seed, {split, label, index});
    set.labels[i] = label;
    render(spec, label, rng, set.pixels.data() + i * set.image_bytes());
  }
  return set;
}

}  // namespace

SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.image_size < 8) {
    throw ConfigError("synthetic data needs at least 2 classes and 8x8 images");
  }
  if (spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw ConfigError("synthetic data needs at least one train and one test image per class");
  }
  SynthDataset data;
  std::size_t val = spec.val_per_class;
  std::size_t train = spec.train_per_class;
  if (val == 0) {
    if (train < 2) {
      throw ConfigError("cannot carve a validation split from a single training image per class");
    }
    val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(train))));
    train -= val;
    // Carved images keep their training-stream identities.
    data.train = make_split(spec, seed, kTrainSplit, train, 0);
    data.val = make_split(spec, seed, kTrainSplit, val, train);
  } else {
    data.train = make_split(spec, seed, kTrainSplit, train, 0);
    data.val = make_split(spec, seed, kValSplit, val, 0);
  }
  data.test = make_split(spec, seed, kTestSplit, spec.test_per_class, 0);
  return data;
}

template <typename T>
Tensor<T> make_batch(const ImageSet& set, std::span<const std::size_t> indices, const std::vector<bool>& flips) {
  const std::size_t c = set.channels, h = set.height, w = set.width;
  std::vector<T> values(indices.size() * c * h * w);
  const T inv_scale = T(1) / (T(255) * static_cast<T>(kPixelStd));
  const T offset = static_cast<T>(kPixelMean) / static_cast<T>(kPixelStd);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= set.size()) {
      throw DimensionError("make_batch: image index out of range");
    }
    const auto img = set.image(indices[b]);
    const bool flip = !flips.empty() && flips[b];
    T* dst = values.data() + b * c * h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t* src_row = img.data() + (ch * h + y) * w;
        T* dst_row = dst + (ch * h + y) * w;
        for (std::size_t x = 0; x < w; ++x) {
          const std::uint8_t v = flip ? src_row[w - 1 - x] : src_row[x];
          dst_row[x] = static_cast<T>(v) * inv_scale - offset;
        }
      }
    }
  }
  return Tensor<T>({indices.size(), c, h, w}, std::move(values));
}

std::vector<bool> flip_decisions(std::size_t count, double probability, Rng& rng) {
  std::vector<bool> flips(count);
  for (std::size_t i = 0; i < count; ++i) flips[i] = rng.bernoulli(probability);
  return flips;
}

void write_image_set(const std::filesystem::path& dir, const ImageSet& set) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "images.bin", std::ios::binary);
  if (!bin) {
    throw FormatError("cannot write " + (dir / "images.bin").string());
  }
  io::write_magic(bin, "CRXD");
  io::write_le<std::uint32_t>(bin, static_cast<std::uint32_t>(set.size()));
  io::write_le<std::uint16_t>(bin, static_cast<std::uint16_t>(set.height));
  io::write_le<std::uint16_t>(bin, static_cast<std::uint16_t>(set.width));
  io::write_le<std::uint8_t>(bin, static_cast<std::uint8_t>(set.channels));
  bin.write(reinterpret_cast<const char*>(set.pixels.data()), static_cast<std::streamsize>(set.pixels.size()));
  std::ofstream csv(dir / "labels.csv");
  csv << "index,label\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    csv << i << ',' << set.labels[i] << '\n';
  }
}

ImageSet read_image_set(const std::filesystem::path& images_bin) {
  std::ifstream bin(images_bin, std::ios::binary);
  if (!bin) {
    throw FormatError("cannot open " + images_bin.string());
  }
  io::expect_magic(bin, "CRXD", "image set");
  ImageSet set;
  const auto count = io::read_le<std::uint32_t>(bin, "image count");
  set.height = io::read_le<std::uint16_t>(bin, "height");
  set.width = io::read_le<std::uint16_t>(bin, "width");
  set.channels = io::read_le<std::uint8_t>(bin, "channels");
  if (set.height == 0 || set.width == 0 || set.channels == 0) {
    throw FormatError("image set has a zero extent");
  }
  set.pixels.resize(static_cast<std::size_t>(count) * set.image_bytes());
  if (!bin.read(reinterpret_cast<char*>(set.pixels.data()), static_cast<std::streamsize>(set.pixels.size()))) {
    throw FormatError("image set truncated: expected " + std::to_string(count) + " images");
  }
  set.labels.assign(count, 0);
  std::ifstream csv(images_bin.parent_path() / "labels.csv");
  if (csv) {
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::size_t index = 0, label = 0;
      char comma = 0;
      if (!(row >> index >> comma >> label) || comma != ',' || index >= count) {
        throw FormatError("malformed labels.csv line: " + line);
      }
      set.labels[index] = label;
    }
  }
  return set;
}

template Tensor<float> make_batch<float>(const ImageSet&, std::span<const std::size_t>, const std::vector<bool>&);
template Tensor<double> make_batch<double>(const ImageSet&, std::span<const std::size_t>, const std::vector<bool>&);

}  // namespace crossx

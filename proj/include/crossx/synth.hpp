#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "crossx/random.hpp"
#include "crossx/tensor.hpp"

namespace crossx {

/// Procedural fine-grained image classes. Every class shares the same global
/// object distribution; a class is identified only by a small texture patch
/// (stripe orientation/period or checkerboard, plus a colour modulation) whose
/// position and phase are random. Three diagonal-stripe distractor patches that
/// no class uses are scattered over every image. The textures have zero mean at
/// every pixel, so class means coincide. With `fine_grained = false` each class additionally
/// gets its own object colour and shape.
struct SynthSpec {
  std::size_t classes = 10;
  std::size_t image_size = 64;
  std::size_t train_per_class = 100;
  std::size_t val_per_class = 0;  // 0: carve 10% of train per class
  std::size_t test_per_class = 20;
  bool fine_grained = true;
  double noise = 0.05;
  double patch_contrast = 0.25;

  bool operator==(const SynthSpec&) const = default;
};

/// u8 images stored planar (C x H x W per image) with labels.
struct ImageSet {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
  }
};

struct SynthDataset {
  ImageSet train;
  ImageSet val;
  ImageSet test;
};

SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Pixel value -> network input.
inline constexpr float kPixelMean = 0.5f;
inline constexpr float kPixelStd = 0.25f;

/// Stacks images into an [N x C x H x W] tensor, mirroring horizontally where
/// `flips[i]` is set (`flips` may be empty).
template <typename T>
Tensor<T> make_batch(const ImageSet& set, std::span<const std::size_t> indices, const std::vector<bool>& flips = {});

/// Horizontal-flip decisions for one training batch.
std::vector<bool> flip_decisions(std::size_t count, double probability, Rng& rng);

/// Writes images.bin ("CRXD", u32 count, u16 H, u16 W, u8 C, raw u8 pixels)
/// and labels.csv (index,label) into `dir`.
void write_image_set(const std::filesystem::path& dir, const ImageSet& set);

/// Reads an images.bin file; labels come from a sibling labels.csv when present.
ImageSet read_image_set(const std::filesystem::path& images_bin);

}  // namespace crossx

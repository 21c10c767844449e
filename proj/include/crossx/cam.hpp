#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crossx/model.hpp"
#include "crossx/synth.hpp"

namespace crossx {

/// Row-major single-channel map.
struct Map2d {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

/// Mean over channels of sample `n` of an [N x C x H x W] tensor.
template <typename T>
Map2d channel_mean(const Tensor<T>& maps, std::size_t n);

/// Channel-weighted sum of sample `n`: sum_c weights[c] * maps[n, c].
template <typename T>
Map2d channel_weighted(const Tensor<T>& maps, std::size_t n, std::span<const T> weights);

/// Bilinear resize with half-pixel sampling, source coordinates clamped to the
/// map border.
Map2d resize_bilinear(const Map2d& map, std::size_t height, std::size_t width);

/// Min-max normalization to [0, 255]; a constant map becomes uniform 128.
std::vector<std::uint8_t> to_gray(const Map2d& map);

/// Elementwise maximum of equally sized maps.
Map2d max_maps(const std::vector<Map2d>& maps);

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> gray);
void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb);

/// 0.5 * image + 0.5 * heat, per pixel; `image` is planar CHW with 1 or 3
/// channels, the result interleaved RGB.
std::vector<std::uint8_t> overlay(std::span<const std::uint8_t> image, std::size_t channels, std::size_t height,
                                  std::size_t width, std::span<const std::uint8_t> heat);

struct CamOptions {
  /// Weight channels by the predicted class's classifier row instead of
  /// taking the plain channel mean.
  bool classifier_weighted = false;
  std::size_t batch_size = 16;
};

/// For every image, every present stage and every excitation p writes
/// img<i>_<stage>_p<p>.pgm and img<i>_<stage>_p<p>_overlay.ppm, plus
/// img<i>_<stage>_combined.pgm (max over excitations). Returns the written
/// paths in order.
std::vector<std::filesystem::path> export_cams(CrossXModel<float>& model, const ImageSet& images,
                                               const std::filesystem::path& outdir, const CamOptions& options = {});

}  // namespace crossx

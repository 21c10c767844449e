#include "crossx/cam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace crossx {

template <typename T>
Map2d channel_mean(const Tensor<T>& maps, std::size_t n) {
  const std::size_t c = maps.dim(1);
  const std::vector<T> ones(c, T(1) / static_cast<T>(c));
  return channel_weighted(maps, n, std::span<const T>(ones));
}

template <typename T>
Map2d channel_weighted(const Tensor<T>& maps, std::size_t n, std::span<const T> weights) {
  if (maps.rank() != 4 || n >= maps.dim(0) || weights.size() != maps.dim(1)) {
    throw DimensionError("channel map: bad sample index or weight count for " + shape_str(maps.shape()));
  }
  const std::size_t c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
  Map2d out{h, w, std::vector<double>(h * w, 0.0)};
  auto v = maps.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = v.data() + (n * c + ch) * h * w;
    const double wt = static_cast<double>(weights[ch]);
    for (std::size_t i = 0; i < h * w; ++i) out.values[i] += wt * static_cast<double>(src[i]);
  }
  return out;
}

Map2d resize_bilinear(const Map2d& map, std::size_t height, std::size_t width) {
  if (map.height == 0 || map.width == 0) {
    throw DimensionError("resize_bilinear: empty map");
  }
  Map2d out{height, width, std::vector<double>(height * width)};
  const double sy = static_cast<double>(map.height) / static_cast<double>(height);
  const double sx = static_cast<double>(map.width) / static_cast<double>(width);
  auto tap = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    tap((static_cast<double>(y) + 0.5) * sy - 0.5, map.height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      tap((static_cast<double>(x) + 0.5) * sx - 0.5, map.width, x0, x1, fx);
      const auto at = [&](std::size_t yy, std::size_t xx) { return map.values[yy * map.width + xx]; };
      const double top = (1 - fx) * at(y0, x0) + fx * at(y0, x1);
      const double bottom = (1 - fx) * at(y1, x0) + fx * at(y1, x1);
      out.values[y * width + x] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

std::vector<std::uint8_t> to_gray(const Map2d& map) {
  std::vector<std::uint8_t> out(map.values.size(), 128);
  if (map.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (map.values[i] - *lo) / range));
  }
  return out;
}

Map2d max_maps(const std::vector<Map2d>& maps) {
  if (maps.empty()) {
    throw DimensionError("max_maps: no maps");
  }
  Map2d out = maps.front();
  for (std::size_t m = 1; m < maps.size(); ++m) {
    if (maps[m].height != out.height || maps[m].width != out.width) {
      throw DimensionError("max_maps: maps differ in size");
    }
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::max(out.values[i], maps[m].values[i]);
  }
  return out;
}

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t width, std::size_t height,
                  std::span<const std::uint8_t> data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw FormatError("cannot write " + path.string());
  }
  os << magic << '\n' << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

std::string image_prefix(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%04zu", index);
  return buf;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) {
    throw DimensionError("write_pgm: pixel count does not match " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  write_netpbm(path, "P5", width, height, gray);
}

void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> rgb) {
  if (rgb.size() != 3 * width * height) {
    throw DimensionError("write_ppm: pixel count does not match " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  write_netpbm(path, "P6", width, height, rgb);
}

std::vector<std::uint8_t> overlay(std::span<const std::uint8_t> image, std::size_t channels, std::size_t height,
                                  std::size_t width, std::span<const std::uint8_t> heat) {
  const std::size_t plane = height * width;
  if ((channels != 1 && channels != 3) || image.size() != channels * plane || heat.size() != plane) {
    throw DimensionError("overlay: image and heatmap sizes disagree");
  }
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t src = image[(channels == 3 ? c : 0) * plane + i];
      rgb[3 * i + c] = static_cast<std::uint8_t>((static_cast<unsigned>(src) + heat[i] + 1) / 2);
    }
  }
  return rgb;
}

std::vector<std::filesystem::path> export_cams(CrossXModel<float>& model, const ImageSet& images,
                                               const std::filesystem::path& outdir, const CamOptions& options) {
  if (images.channels != model.spec().in_channels) {
    throw DimensionError("export_cams: images have " + std::to_string(images.channels) + " channels, model expects " +
                         std::to_string(model.spec().in_channels));
  }
  std::filesystem::create_directories(outdir);
  std::vector<NamedTensor<float>> params;
  if (options.classifier_weighted) params = model.parameters();
  auto head_weight = [&](Stage stage) -> const Tensor<float>& {
    const std::string name = "head_" + std::string(to_string(stage)) + ".weight";
    for (const auto& p : params) {
      if (p.name == name) return p.tensor;
    }
    throw DimensionError("export_cams: model has no " + name);
  };

  std::vector<std::filesystem::path> written;
  const std::size_t h = images.height, w = images.width;
  for (std::size_t start = 0; start < images.size(); start += options.batch_size) {
    const std::size_t count = std::min(options.batch_size, images.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = model.forward(make_batch<float>(images, idx), Mode::kEval);
    const Tensor<float> prob = combined_prediction(out);
    const std::size_t k = prob.dim(1);

    std::vector<std::pair<Stage, const StageOutput<float>*>> stages{{Stage::kTop, &out.top}};
    if (out.mid) stages.emplace_back(Stage::kMid, &*out.mid);
    if (out.merged) stages.emplace_back(Stage::kMerged, &*out.merged);

    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t index = start + n;
      const std::string prefix = image_prefix(index);
      const auto pixels = images.image(index);
      auto pr = prob.values().subspan(n * k, k);
      const std::size_t predicted = static_cast<std::size_t>(std::max_element(pr.begin(), pr.end()) - pr.begin());
      for (const auto& [stage, so] : stages) {
        const std::string stage_name(to_string(stage));
        std::vector<Map2d> resized;
        for (std::size_t p = 0; p < so->maps.size(); ++p) {
          Map2d map;
          if (options.classifier_weighted) {
            const std::size_t c = so->maps[p].dim(1);
            const auto row = head_weight(stage).values().subspan(predicted * head_weight(stage).dim(1) + p * c, c);
            map = channel_weighted(so->maps[p], n, row);
          } else {
            map = channel_mean(so->maps[p], n);
          }
          resized.push_back(resize_bilinear(map, h, w));
          const auto gray = to_gray(resized.back());
          const std::string base = prefix + "_" + stage_name + "_p" + std::to_string(p);
          write_pgm(outdir / (base + ".pgm"), w, h, gray);
          written.push_back(outdir / (base + ".pgm"));
          write_ppm(outdir / (base + "_overlay.ppm"), w, h, overlay(pixels, images.channels, h, w, gray));
          written.push_back(outdir / (base + "_overlay.ppm"));
        }
        const auto combined = to_gray(max_maps(resized));
        const auto path = outdir / (prefix + "_" + stage_name + "_combined.pgm");
        write_pgm(path, w, h, combined);
        written.push_back(path);
      }
    }
  }
  return written;
}

template Map2d channel_mean(const Tensor<float>&, std::size_t);
template Map2d channel_mean(const Tensor<double>&, std::size_t);
template Map2d channel_weighted(const Tensor<float>&, std::size_t, std::span<const float>);
template Map2d channel_weighted(const Tensor<double>&, std::size_t, std::span<const double>);

}  // namespace crossx

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "crossx/cam.hpp"
#include "testkit.hpp"

using namespace crossx;

namespace {

struct Netpbm {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::vector<std::uint8_t> data;
};

Netpbm read_netpbm(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  Netpbm img;
  is >> img.magic >> img.width >> img.height >> img.maxval;
  is.get();
  img.data.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  return img;
}

ModelSpec cam_spec() {
  ModelSpec s;
  s.image_size = 16;
  s.stage_channels = {4, 8, 16};
  s.reduction = 4;
  s.classes = 3;
  return s;
}

ImageSet random_images(std::size_t count, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  ImageSet set;
  set.height = set.width = size;
  set.pixels.resize(count * 3 * size * size);
  for (auto& px : set.pixels) px = static_cast<std::uint8_t>(rng.below(256));
  set.labels.assign(count, 0);
  return set;
}

}  // namespace

TEST(Cam, ChannelMeanAndWeighted) {
  Tensor64 maps({2, 2, 1, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  auto m = channel_mean(maps, 0);
  EXPECT_EQ(m.height, 1u);
  EXPECT_EQ(m.values, (std::vector<double>{2, 3}));
  const std::vector<double> w{2.0, -1.0};
  auto cw = channel_weighted(maps, 1, std::span<const double>(w));
  EXPECT_EQ(cw.values, (std::vector<double>{-10, 0}));
  EXPECT_THROW(channel_mean(maps, 2), DimensionError);
}

TEST(Cam, BilinearResizeHalfPixel) {
  const Map2d src{2, 2, {0, 1, 2, 3}};
  const auto out = resize_bilinear(src, 4, 4);
  const double f[4] = {0, 0.25, 0.75, 1};
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(out.values[y * 4 + x], f[x] + 2 * f[y]);
  }
  const auto same = resize_bilinear(src, 2, 2);
  EXPECT_EQ(same.values, src.values);
}

TEST(Cam, ResizePreservesRangeAndConstants) {
  Rng rng(3);
  Map2d src{3, 5, {}};
  for (int i = 0; i < 15; ++i) src.values.push_back(rng.uniform(-2, 2));
  const auto out = resize_bilinear(src, 17, 9);
  const auto [lo, hi] = std::minmax_element(src.values.begin(), src.values.end());
  for (double v : out.values) {
    EXPECT_GE(v, *lo - 1e-12);
    EXPECT_LE(v, *hi + 1e-12);
  }
  const auto flat = resize_bilinear(Map2d{2, 3, std::vector<double>(6, 1.5)}, 8, 8);
  for (double v : flat.values) EXPECT_DOUBLE_EQ(v, 1.5);
}

TEST(Cam, GrayNormalization) {
  EXPECT_EQ(to_gray(Map2d{1, 3, {-1, 0, 1}}), (std::vector<std::uint8_t>{0, 128, 255}));
  EXPECT_EQ(to_gray(Map2d{2, 2, {4, 4, 4, 4}}), std::vector<std::uint8_t>(4, 128));
}

TEST(Cam, MaxAndOverlay) {
  const auto m = max_maps({Map2d{1, 2, {1, 5}}, Map2d{1, 2, {3, 2}}});
  EXPECT_EQ(m.values, (std::vector<double>{3, 5}));
  EXPECT_THROW(max_maps({Map2d{1, 2, {1, 5}}, Map2d{2, 1, {3, 2}}}), DimensionError);

  const std::vector<std::uint8_t> gray{0, 200}, heat{255, 100};
  EXPECT_EQ(overlay(gray, 1, 1, 2, heat), (std::vector<std::uint8_t>{128, 128, 128, 150, 150, 150}));
  const std::vector<std::uint8_t> rgb{10, 20, 30, 40, 50, 60};
  EXPECT_EQ(overlay(rgb, 3, 1, 2, heat), (std::vector<std::uint8_t>{133, 143, 153, 60, 70, 80}));
}

TEST(Cam, NetpbmFiles) {
  testkit::TempDir dir("cam");
  const std::vector<std::uint8_t> px{1, 2, 3, 4, 5, 6};
  write_pgm(dir.path() / "a.pgm", 3, 2, px);
  const auto a = read_netpbm(dir.path() / "a.pgm");
  EXPECT_EQ(a.magic, "P5");
  EXPECT_EQ(a.width, 3u);
  EXPECT_EQ(a.height, 2u);
  EXPECT_EQ(a.maxval, 255u);
  EXPECT_EQ(a.data, px);
  write_ppm(dir.path() / "b.ppm", 2, 1, px);
  EXPECT_EQ(read_netpbm(dir.path() / "b.ppm").magic, "P6");
  EXPECT_THROW(write_pgm(dir.path() / "c.pgm", 2, 2, px), DimensionError);
}

TEST(Cam, ExportCountsAndResolution) {
  testkit::TempDir dir("cam");
  CrossXModel<float> model(cam_spec(), 1);
  const auto images = random_images(3, 16, 2);
  CamOptions opt;
  opt.batch_size = 2;
  const auto written = export_cams(model, images, dir.path(), opt);
  // Per image: 3 stages x 2 excitations x (heatmap + overlay) + 3 combined.
  EXPECT_EQ(written.size(), 3u * (6 + 6 + 3));
  std::set<std::filesystem::path> unique(written.begin(), written.end());
  EXPECT_EQ(unique.size(), written.size());
  std::size_t heatmaps = 0, combined = 0, overlays = 0;
  for (const auto& p : written) {
    ASSERT_TRUE(std::filesystem::exists(p)) << p;
    const auto img = read_netpbm(p);
    EXPECT_EQ(img.width, 16u);
    EXPECT_EQ(img.height, 16u);
    const std::string name = p.filename().string();
    if (name.ends_with("_overlay.ppm")) {
      ++overlays;
      EXPECT_EQ(img.data.size(), 3u * 256);
    } else if (name.ends_with("_combined.pgm")) {
      ++combined;
    } else {
      ++heatmaps;
      EXPECT_EQ(img.data.size(), 256u);
    }
  }
  EXPECT_EQ(heatmaps, 18u);
  EXPECT_EQ(overlays, 18u);
  EXPECT_EQ(combined, 9u);
  for (const char* stage : {"top", "mid", "merged"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / ("img0002_" + std::string(stage) + "_p1.pgm"))) << stage;
  }
}

TEST(Cam, CombinedMapIsMaxOfExcitations) {
  testkit::TempDir dir("cam");
  CrossXModel<float> model(cam_spec(), 4);
  const auto images = random_images(1, 16, 5);
  export_cams(model, images, dir.path());
  const auto out = model.forward(make_batch<float>(images, std::vector<std::size_t>{0}), Mode::kEval);
  std::vector<Map2d> maps;
  for (const auto& m : out.top.maps) maps.push_back(resize_bilinear(channel_mean(m, 0), 16, 16));
  EXPECT_EQ(read_netpbm(dir.path() / "img0000_top_combined.pgm").data, to_gray(max_maps(maps)));
  EXPECT_EQ(read_netpbm(dir.path() / "img0000_top_p0.pgm").data, to_gray(maps[0]));
}

TEST(Cam, ExportIsRepeatable) {
  testkit::TempDir a("cam"), b("cam");
  CrossXModel<float> model(cam_spec(), 6);
  const auto images = random_images(2, 16, 7);
  CamOptions opt;
  opt.classifier_weighted = true;
  const auto wa = export_cams(model, images, a.path(), opt);
  export_cams(model, images, b.path(), opt);
  for (const auto& p : wa) {
    const auto other = b.path() / p.filename();
    EXPECT_EQ(read_netpbm(p).data, read_netpbm(other).data) << p.filename();
  }
}

TEST(Cam, ChannelMismatchRejected) {
  testkit::TempDir dir("cam");
  CrossXModel<float> model(cam_spec(), 1);
  auto images = random_images(1, 16, 2);
  images.channels = 1;
  images.pixels.resize(256);
  EXPECT_THROW(export_cams(model, images, dir.path()), DimensionError);
}

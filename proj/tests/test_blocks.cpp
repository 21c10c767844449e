#include <gtest/gtest.h>

#include <cmath>

#include "crossx/autodiff.hpp"
#include "crossx/blocks.hpp"
#include "testkit.hpp"

using namespace crossx;
using testkit::random_tensor;
using testkit::to_vector;

namespace {

OsmeParams<double> zero_osme(std::size_t c, std::size_t p, std::size_t r) {
  OsmeParams<double> params;
  params.channels = c;
  params.reduction = r;
  for (std::size_t i = 0; i < p; ++i) {
    params.squeeze.push_back(Tensor64({c / r, c}, true));
    params.excite.push_back(Tensor64({c, c / r}, true));
  }
  return params;
}

// Per-sample, per-channel gating written with explicit loops.
std::vector<double> naive_osme(const Tensor64& u, const Tensor64& w1, const Tensor64& w2) {
  const std::size_t n = u.dim(0), c = u.dim(1), hw = u.dim(2) * u.dim(3), d = w1.dim(0);
  std::vector<double> out(u.numel());
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> z(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) z[ch] += u.values()[(s * c + ch) * hw + i];
      z[ch] /= static_cast<double>(hw);
    }
    std::vector<double> hidden(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t ch = 0; ch < c; ++ch) hidden[j] += w1.at({j, ch}) * z[ch];
      hidden[j] = std::max(hidden[j], 0.0);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      double a = 0;
      for (std::size_t j = 0; j < d; ++j) a += w2.at({ch, j}) * hidden[j];
      const double m = 1.0 / (1.0 + std::exp(-a));
      for (std::size_t i = 0; i < hw; ++i) out[(s * c + ch) * hw + i] = m * u.values()[(s * c + ch) * hw + i];
    }
  }
  return out;
}

}  // namespace

TEST(Osme, ZeroWeightsHalveTheInput) {
  Rng rng(1);
  auto u = random_tensor({2, 8, 3, 3}, rng);
  auto out = osme_forward(u, zero_osme(8, 2, 4));
  ASSERT_EQ(out.maps.size(), 2u);
  for (const auto& m : out.maps) {
    for (std::size_t i = 0; i < u.numel(); ++i) EXPECT_DOUBLE_EQ(m.values()[i], 0.5 * u.values()[i]);
  }
}

TEST(Osme, ZeroInputGivesZeroMaps) {
  Rng rng(2);
  auto params = OsmeParams<double>::init(8, 3, 4, rng);
  auto out = osme_forward(Tensor64({2, 8, 2, 2}), params);
  for (const auto& m : out.maps)
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(Osme, MatchesNaiveReweighting) {
  Rng rng(3);
  auto u = random_tensor({3, 16, 4, 4}, rng);
  auto params = OsmeParams<double>::init(16, 2, 4, rng);
  auto out = osme_forward(u, params);
  for (std::size_t p = 0; p < 2; ++p) {
    EXPECT_EQ(out.maps[p].shape(), u.shape());
    const auto expected = naive_osme(u, params.squeeze[p], params.excite[p]);
    EXPECT_LE(testkit::max_abs_diff(out.maps[p].values(), expected), 1e-9);
  }
  EXPECT_NE(to_vector(out.maps[0]), to_vector(out.maps[1]));
}

TEST(Osme, GatesStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto u = random_tensor({2, 16, 3, 3}, rng, -3, 3);
    auto out = osme_forward(u, OsmeParams<double>::init(16, 3, 4, rng));
    for (const auto& g : out.gates) {
      EXPECT_EQ(g.shape(), (Shape{2, 16}));
      for (double v : g.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
}

TEST(Osme, SharedWeightsGiveIdenticalMaps) {
  Rng rng(4);
  auto u = random_tensor({2, 8, 3, 3}, rng);
  auto params = OsmeParams<double>::init(8, 2, 2, rng);
  params.squeeze[1] = params.squeeze[0];
  params.excite[1] = params.excite[0];
  auto out = osme_forward(u, params);
  EXPECT_EQ(to_vector(out.maps[0]), to_vector(out.maps[1]));
}

TEST(Osme, ChannelMismatchAndBadReduction) {
  Rng rng(5);
  auto params = OsmeParams<double>::init(8, 2, 4, rng);
  EXPECT_THROW(osme_forward(Tensor64({1, 4, 2, 2}), params), DimensionError);
  EXPECT_THROW(OsmeParams<double>::init(10, 2, 4, rng), ConfigError);
  EXPECT_THROW(OsmeParams<double>::init(8, 0, 4, rng), ConfigError);
}

TEST(PooledHead, ConstantMapNormalized) {
  for (double c : {2.0, -0.5}) {
    auto f = pooled_head(Tensor64::full({1, 4, 3, 3}, c), PoolMode::kAverage, true);
    for (double v : f.values()) EXPECT_NEAR(v, c / (std::abs(c) * 2.0), 1e-12);
  }
}

TEST(PooledHead, UnnormalizedIsPoolOutput) {
  Rng rng(6);
  auto u = random_tensor({2, 5, 3, 3}, rng);
  for (auto mode : {PoolMode::kAverage, PoolMode::kMax}) {
    EXPECT_EQ(to_vector(pooled_head(u, mode, false)), to_vector(global_pool(u, mode)));
  }
}

TEST(PooledHead, MaxOfPeakedMap) {
  Tensor64 u({1, 2, 2, 2}, {0, 0, 3, 0, 0, -1, 0, 0});
  EXPECT_EQ(to_vector(pooled_head(u, PoolMode::kMax, false)), (std::vector<double>{3, 0}));
}

TEST(PooledHead, NormalizedRowsHaveUnitNorm) {
  Rng rng(7);
  auto f = pooled_head(random_tensor({4, 6, 2, 2}, rng), PoolMode::kMax, true);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += f.at({r, c}) * f.at({r, c});
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
  const auto zero_rows = pooled_head(Tensor64({1, 3, 2, 2}), PoolMode::kAverage, true);
  for (double v : zero_rows.values()) EXPECT_EQ(v, 0.0);
}

namespace {

// K1 = identity over channels, K2 = centered delta, BN at unit running stats.
FpnParams<double> identity_fpn(std::size_t c) {
  FpnParams<double> p;
  p.reduce = Tensor64({c, c, 1, 1});
  p.smooth = Tensor64({c, c, 3, 3});
  for (std::size_t i = 0; i < c; ++i) {
    p.reduce.values_mut()[i * c + i] = 1.0;
    p.smooth.values_mut()[(i * c + i) * 9 + 4] = 1.0;
  }
  p.bn_gamma = Tensor64::full({c}, 1.0);
  p.bn_beta = Tensor64({c});
  p.bn = BatchNormState<double>(c);
  return p;
}

}  // namespace

TEST(FpnMerge, IdentityFiltersAddUpsampledTop) {
  Rng rng(8);
  auto mid = random_tensor({2, 3, 4, 4}, rng), top = random_tensor({2, 3, 2, 2}, rng);
  auto params = identity_fpn(3);
  auto g = fpn_merge(mid, top, params, Mode::kEval);
  auto expected = add(mid, upsample_bilinear2x(top));
  EXPECT_LE(testkit::max_abs_diff(g.values(), expected.values()), 1e-5);

  auto g0 = fpn_merge(mid, Tensor64({2, 3, 2, 2}), params, Mode::kEval);
  EXPECT_LE(testkit::max_abs_diff(g0.values(), mid.values()), 1e-5);
}

TEST(FpnMerge, MatchesCompositionOfPrimitives) {
  Rng rng(9);
  auto mid = random_tensor({2, 4, 6, 6}, rng), top = random_tensor({2, 8, 3, 3}, rng);
  auto params = FpnParams<double>::init(8, 4, rng);
  auto g = fpn_merge(mid, top, params, Mode::kTrain);
  EXPECT_EQ(g.shape(), mid.shape());

  BatchNormState<double> st(4);
  auto inner = conv2d(add(mid, upsample_bilinear2x(conv2d(top, params.reduce, 1, 0))), params.smooth, 1, 1);
  auto expected = batch_norm(inner, params.bn_gamma, params.bn_beta, st, Mode::kTrain);
  EXPECT_LE(testkit::max_abs_diff(g.values(), expected.values()), 1e-12);
}

TEST(FpnMerge, RejectsBadRatioAndChannels) {
  Rng rng(10);
  auto params = FpnParams<double>::init(8, 4, rng);
  EXPECT_THROW(fpn_merge(Tensor64({1, 4, 6, 6}), Tensor64({1, 8, 2, 2}), params, Mode::kEval), DimensionError);
  EXPECT_THROW(fpn_merge(Tensor64({1, 5, 4, 4}), Tensor64({1, 8, 2, 2}), params, Mode::kEval), DimensionError);
  EXPECT_THROW(fpn_merge(Tensor64({1, 4, 4, 4}), Tensor64({1, 6, 2, 2}), params, Mode::kEval), DimensionError);
}

TEST(FpnMerge, GradientsReachBothInputs) {
  Rng rng(11);
  auto mid = random_tensor({2, 4, 4, 4}, rng, -1, 1, true), top = random_tensor({2, 8, 2, 2}, rng, -1, 1, true);
  auto params = FpnParams<double>::init(8, 4, rng);
  auto w = random_tensor({2, 4, 4, 4}, rng);
  backward(sum(mul(fpn_merge(mid, top, params, Mode::kTrain), w)));
  auto nonzero = [](const Tensor64& t) {
    return std::any_of(t.grad().begin(), t.grad().end(), [](double g) { return g != 0.0; });
  };
  EXPECT_TRUE(nonzero(mid));
  EXPECT_TRUE(nonzero(top));
}

TEST(FpnMerge, InitShapes) {
  Rng rng(12);
  auto params = FpnParams<double>::init(16, 8, rng);
  EXPECT_EQ(params.reduce.shape(), (Shape{8, 16, 1, 1}));
  EXPECT_EQ(params.smooth.shape(), (Shape{8, 8, 3, 3}));
  EXPECT_EQ(params.out_channels(), 8u);
  EXPECT_EQ(params.in_channels(), 16u);
}

TEST(Blocks, BlockGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto u = random_tensor({2, 8, 4, 4}, rng, -1, 1, true);
    auto top = random_tensor({2, 8, 2, 2}, rng, -1, 1, true);
    auto osme = OsmeParams<double>::init(8, 2, 2, rng);
    auto fpn = FpnParams<double>::init(8, 8, rng);
    auto w = random_tensor({2, 8, 4, 4}, rng);
    std::vector<Tensor64> leaves{u, top, fpn.reduce, fpn.smooth, fpn.bn_gamma, fpn.bn_beta};
    auto fn = [&] { return sum(mul(fpn_merge(u, top, fpn, Mode::kTrain), w)); };
    EXPECT_LE(grad_check_leaves(fn, leaves).max_rel_error, 1e-4) << "fpn seed " << seed;

    // Redraw the gating weights until no hidden unit sits within 1e-3 of the
    // relu kink.
    auto w0 = random_tensor({2, 8}, rng), w1 = random_tensor({2, 8}, rng);
    auto pooled = [&] {
      const auto out = osme_forward(u, osme);
      return add(sum(mul(pooled_head(out.maps[0], PoolMode::kAverage, false), w0)),
                 sum(mul(pooled_head(out.maps[1], PoolMode::kAverage, true), w1)));
    };
    bool clear = false;
    for (int attempt = 0; attempt < 100 && !clear; ++attempt) {
      KinkProbe probe;
      pooled();
      clear = probe.margin() >= 1e-3;
      if (!clear) osme = OsmeParams<double>::init(8, 2, 2, rng);
    }
    ASSERT_TRUE(clear);
    std::vector<Tensor64> osme_leaves{u};
    for (auto& t : osme.squeeze) osme_leaves.push_back(t);
    for (auto& t : osme.excite) osme_leaves.push_back(t);
    const auto r = grad_check_leaves(pooled, osme_leaves);
    EXPECT_LE(r.max_rel_error, 1e-4) << "osme seed " << seed << " analytic " << r.analytic_at_worst << " numeric "
                                     << r.numeric_at_worst;
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "crossx/autodiff.hpp"
#include "crossx/checkpoint.hpp"
#include "crossx/train.hpp"
#include "testkit.hpp"

using namespace crossx;

namespace {

CrossXConfig tiny_config() {
  CrossXConfig c;
  c.stage_channels = {4, 8, 16};
  c.reduction = 4;
  c.data.classes = 3;
  c.data.image_size = 16;
  c.data.train_per_class = 8;
  c.data.val_per_class = 2;
  c.data.test_per_class = 4;
  c.batch_size = 4;
  c.epochs = 2;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<NamedTensor<double>> single_param(std::vector<double> w) {
  const std::size_t n = w.size();
  return {{"w", Tensor64({n}, std::move(w), true)}};
}

// Leaves grad = `g` on every entry of p.
void set_grad(Tensor64 p, double g) {
  p.zero_grad();
  backward(sum(mul(p, Tensor64(p.shape(), std::vector<double>(p.numel(), g)))));
}

}  // namespace

TEST(LrSchedule, Examples) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 0.01, 15, 0.1), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(14, 0.01, 15, 0.1), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(15, 0.01, 15, 0.1), 0.001);
  EXPECT_NEAR(lr_schedule(29, 0.01, 15, 0.1), 0.001, 1e-15);
  EXPECT_NEAR(lr_schedule(30, 0.01, 15, 0.1), 0.0001, 1e-15);
  EXPECT_THROW(lr_schedule(3, 0.01, 0, 0.1), ConfigError);
}

TEST(LrSchedule, MatchesPowerLaw) {
  for (std::size_t period = 1; period < 7; ++period) {
    for (std::size_t epoch = 0; epoch < 40; ++epoch) {
      double expected = 0.5;
      for (std::size_t k = 0; k < epoch / period; ++k) expected *= 0.3;
      EXPECT_NEAR(lr_schedule(epoch, 0.5, period, 0.3), expected, 1e-15);
    }
  }
}

TEST(SgdStep, MomentumRecurrence) {
  auto params = single_param({0.0, 2.0});
  std::vector<std::vector<double>> v{{0.0, 0.0}};
  set_grad(params[0].tensor, 1.0);
  sgd_step(params, v, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(v[0][0], 1.0);
  EXPECT_DOUBLE_EQ(params[0].tensor.values()[0], -0.1);
  EXPECT_DOUBLE_EQ(params[0].tensor.values()[1], 1.9);
  set_grad(params[0].tensor, 1.0);
  sgd_step(params, v, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(v[0][0], 1.9);
  EXPECT_NEAR(params[0].tensor.values()[0], -0.1 - 0.19, 1e-15);
}

TEST(SgdStep, ZeroRateStillUpdatesVelocity) {
  auto params = single_param({3.0});
  std::vector<std::vector<double>> v{{0.5}};
  set_grad(params[0].tensor, 2.0);
  sgd_step(params, v, 0.0, 0.9);
  EXPECT_EQ(params[0].tensor.values()[0], 3.0);
  EXPECT_DOUBLE_EQ(v[0][0], 0.45 + 2.0);
}

TEST(SgdStep, WeightDecayAddsToGradient) {
  auto params = single_param({2.0});
  std::vector<std::vector<double>> v{{0.0}};
  set_grad(params[0].tensor, 1.0);
  sgd_step(params, v, 0.1, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(v[0][0], 2.0);
  EXPECT_DOUBLE_EQ(params[0].tensor.values()[0], 1.8);
}

TEST(SgdStep, NonFiniteGradientNamesParameter) {
  std::vector<NamedTensor<double>> params{{"good", Tensor64({1}, {1.0}, true)},
                                          {"stage2.conv.weight", Tensor64({2}, {1.0, 1.0}, true)}};
  std::vector<std::vector<double>> v{{0.0}, {0.0, 0.0}};
  set_grad(params[0].tensor, 1.0);
  set_grad(params[1].tensor, std::numeric_limits<double>::quiet_NaN());
  try {
    sgd_step(params, v, 0.1, 0.9);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("stage2.conv.weight"), std::string::npos);
  }
  // Nothing was modified.
  EXPECT_EQ(params[0].tensor.values()[0], 1.0);
  EXPECT_EQ(v[0][0], 0.0);
}

TEST(SgdStep, BufferMismatchRejected) {
  auto params = single_param({1.0, 2.0});
  std::vector<std::vector<double>> v{{0.0}};
  EXPECT_THROW(sgd_step(params, v, 0.1, 0.9), DimensionError);
}

TEST(Metrics, HeaderAndEmptyFields) {
  const std::string header = metrics_header();
  EXPECT_EQ(header.rfind("epoch,lr,loss_total,loss_data,", 0), 0u);
  for (const char* col : {"c3s_top", "kl_top_mid", "val_acc_merged", "s_offdiag_merged"}) {
    EXPECT_NE(header.find(col), std::string::npos) << col;
  }
  MetricsRow row;
  const std::string line = metrics_line(row);
  EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), metrics_columns().size() - 1);
  EXPECT_NE(line.find(",,"), std::string::npos);
}

TEST(Train, ZeroEpochsWritesInitialCheckpointOnly) {
  testkit::TempDir dir("train");
  auto c = tiny_config();
  c.epochs = 0;
  TrainOptions opt;
  opt.outdir = dir.path();
  const auto r = train(c, opt);
  EXPECT_TRUE(r.state.history.empty());
  EXPECT_TRUE(std::filesystem::exists(dir.path() / kInitialCheckpoint));
  EXPECT_EQ(slurp(dir.path() / "metrics.csv"), metrics_header() + "\n");
  EXPECT_EQ(parse_config(slurp(dir.path() / "effective-config.txt")), c);
}

TEST(Train, RowsAndCheckpoints) {
  testkit::TempDir dir("train");
  const auto c = tiny_config();
  TrainOptions opt;
  opt.outdir = dir.path();
  const auto r = train(c, opt);
  ASSERT_EQ(r.state.history.size(), 2u);
  EXPECT_EQ(r.state.epoch, 2u);
  EXPECT_EQ(r.state.step, 2u * (24 / 4));
  EXPECT_EQ(r.state.history[1].epoch, 1u);
  for (const char* f : {kInitialCheckpoint, kBestCheckpoint, kFinalCheckpoint}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  }
  std::ifstream metrics(dir.path() / "metrics.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) ++lines;
  EXPECT_EQ(lines, 3u);

  const auto final = read_checkpoint(dir.path() / kFinalCheckpoint);
  EXPECT_EQ(final.epoch, 2u);
  EXPECT_EQ(final.step, r.state.step);
}

TEST(Train, LossComponentsAccountForTotal) {
  auto c = tiny_config();
  c.weights.c3s_top = 0.7;
  c.weights.c3s_mid = 0.3;
  c.weights.c3s_merged = 0.2;
  c.weights.cl_mid = 0.5;
  c.weights.cl_merged = 1.5;
  c.weights.c3s_outer = 0.9;
  c.weights.cl_outer = 1.1;
  const auto r = train(c);
  const auto& w = c.weights;
  for (const auto& row : r.state.history) {
    const double recomputed = row.loss_data +
                              w.c3s_outer * (w.c3s_top * *row.c3s_top + w.c3s_mid * *row.c3s_mid +
                                             w.c3s_merged * *row.c3s_merged) +
                              w.cl_outer * (w.cl_mid * *row.kl_top_mid + w.cl_merged * *row.kl_top_merged);
    EXPECT_NEAR(row.loss_total, recomputed, 1e-6);
  }
}

TEST(Train, IdenticalRunsAreIdentical) {
  testkit::TempDir a("train"), b("train");
  const auto c = tiny_config();
  TrainOptions oa, ob;
  oa.outdir = a.path();
  ob.outdir = b.path();
  train(c, oa);
  train(c, ob);
  EXPECT_EQ(slurp(a.path() / "metrics.csv"), slurp(b.path() / "metrics.csv"));
  for (const char* f : {kBestCheckpoint, kFinalCheckpoint}) EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
}

TEST(Train, ZeroWeightsMatchPlainClassifier) {
  auto zero = tiny_config();
  zero.weights = LossWeights{0, 0, 0, 0, 0, 0, 0};
  auto plain = tiny_config();
  plain.use_c3s = false;
  plain.use_cl = false;
  auto rz = train(zero), rp = train(plain);
  ASSERT_EQ(rz.state.history.size(), rp.state.history.size());
  for (std::size_t e = 0; e < rz.state.history.size(); ++e) {
    const auto &x = rz.state.history[e], &y = rp.state.history[e];
    EXPECT_EQ(x.loss_total, y.loss_total);
    EXPECT_EQ(x.loss_data, y.loss_data);
    EXPECT_EQ(x.train_acc, y.train_acc);
    EXPECT_EQ(x.val_acc, y.val_acc);
    EXPECT_EQ(x.val_kl_top_mid, y.val_kl_top_mid);
  }
  auto pz = rz.state.model.parameters(), pp = rp.state.model.parameters();
  ASSERT_EQ(pz.size(), pp.size());
  for (std::size_t i = 0; i < pz.size(); ++i) {
    EXPECT_TRUE(std::equal(pz[i].tensor.values().begin(), pz[i].tensor.values().end(),
                           pp[i].tensor.values().begin()))
        << pz[i].name;
  }
}

TEST(Train, DivergenceAbortsKeepingLastGoodCheckpoint) {
  testkit::TempDir dir("train");
  auto c = tiny_config();
  c.lr = 1e20;
  c.epochs = 3;
  TrainOptions opt;
  opt.outdir = dir.path();
  EXPECT_THROW(train(c, opt), NumericalError);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / kInitialCheckpoint));
  EXPECT_NO_THROW(read_checkpoint(dir.path() / kInitialCheckpoint));
}

TEST(Evaluate, DuplicatedSplitGivesSameAccuracy) {
  auto c = tiny_config();
  c.epochs = 1;
  auto r = train(c);
  const auto once = evaluate(r.state.model, r.data.test);
  ImageSet twice = r.data.test;
  twice.pixels.insert(twice.pixels.end(), r.data.test.pixels.begin(), r.data.test.pixels.end());
  twice.labels.insert(twice.labels.end(), r.data.test.labels.begin(), r.data.test.labels.end());
  const auto doubled = evaluate(r.state.model, twice, 5);
  EXPECT_EQ(doubled.count, 2 * once.count);
  EXPECT_DOUBLE_EQ(doubled.accuracy, once.accuracy);
  EXPECT_NEAR(*doubled.kl_top_mid, *once.kl_top_mid, 1e-6);
  EXPECT_GE(*once.kl_top_mid, 0.0);
  EXPECT_EQ(evaluate(r.state.model, r.data.test, 3).accuracy, once.accuracy);
}

TEST(Evaluate, MemorizedTrainSplitScoresPerfectly) {
  auto c = tiny_config();
  c.data.train_per_class = 4;
  c.data.val_per_class = 1;
  c.epochs = 40;
  c.decay_period = 40;
  c.flip_probability = 0.0;
  c.data.fine_grained = false;
  auto r = train(c);
  EXPECT_EQ(evaluate(r.state.model, r.data.train).accuracy, 1.0);
}

TEST(Evaluate, EmptySplitRejected) {
  auto c = tiny_config();
  c.epochs = 0;
  auto r = train(c);
  EXPECT_THROW(evaluate(r.state.model, ImageSet{}), ContractError);
}

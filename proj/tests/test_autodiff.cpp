#include <gtest/gtest.h>

#include <functional>

#include "crossx/autodiff.hpp"
#include "crossx/blocks.hpp"
#include "crossx/fault.hpp"
#include "crossx/ops.hpp"
#include "crossx/regularizers.hpp"
#include "testkit.hpp"

using namespace crossx;
using testkit::off_kink_tensor;
using testkit::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// A random linear functional of t, so every output coordinate reaches the root.
Tensor64 project(const Tensor64& t, Rng& rng) { return sum(mul(t, random_tensor(t.shape(), rng))); }

std::vector<double> grads(const Tensor64& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST(Backward, SumOfSquares) {
  Tensor64 x({3}, {1, -2, 0.5}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(grads(x), (std::vector<double>{2, -4, 1}));
}

TEST(Backward, UnreachableLeafHasZeroGradient) {
  Tensor64 x({2}, {1, 2}, true), y({2}, {3, 4}, true);
  backward(sum(x));
  for (double g : y.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarRootIsRejected) {
  Tensor64 x({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, LeafGradientsAccumulate) {
  Tensor64 x({1}, {3}, true);
  backward(sum(x));
  backward(sum(scale(x, 2.0)));
  EXPECT_EQ(x.grad()[0], 3.0);
}

TEST(Backward, SharedSubexpression) {
  Tensor64 x({2}, {1, 2}, true);
  auto y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_EQ(grads(x), (std::vector<double>{4, 8}));
}

TEST(Backward, StopGradientBlocksFlow) {
  Tensor64 x({2}, {1, 2}, true);
  backward(sum(mul(x, stop_gradient(x))));
  EXPECT_EQ(grads(x), (std::vector<double>{1, 2}));
}

TEST(Backward, InferenceGraphKeepsNoHistory) {
  Tensor64 x({2}, {1, 2});
  auto y = relu(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tape, TopologicalOrderAndSingleVisit) {
  Rng rng(1);
  auto x = random_tensor({3, 4}, rng, -1, 1, true), w = random_tensor({4, 2}, rng, -1, 1, true);
  auto root = sum(softmax(matmul(relu(x), w)));
  auto tape = Tape<double>::record(root);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i]->inputs) {
      if (!in->requires_grad) continue;
      const auto pos = std::find(nodes.begin(), nodes.end(), in.get()) - nodes.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i);
    }
    EXPECT_EQ(std::count(nodes.begin(), nodes.end(), nodes[i]), 1);
  }
}

TEST(Backward, Deterministic) {
  Rng rng(2);
  auto x = random_tensor({2, 3, 6, 6}, rng, -1, 1, true);
  auto k = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
  auto f = [&] { return sum(global_pool(relu(conv2d(x, k, 1, 1)), PoolMode::kAverage)); };
  backward(f());
  const auto first = grads(k);
  k.zero_grad();
  x.zero_grad();
  backward(f());
  EXPECT_EQ(first, grads(k));
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(3);
  auto x = random_tensor({4, 5}, rng);
  EXPECT_LE(grad_check([](const Tensor64& t) { return sum(t); }, x).max_rel_error, 1e-8);
}

TEST(GradCheck, RelativeErrorFormula) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
}

TEST(GradCheck, MatmulChain) {
  Rng rng(4);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5, 2}, rng);
  Rng proj(5);
  auto p = random_tensor({3, 2}, proj);
  auto r = grad_check([&](const Tensor64& x) { return sum(mul(matmul(matmul(x, b), c), p)); }, a);
  EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, DetectsWrongGradient) {
  Rng rng(6);
  std::vector<Tensor64> f;
  for (int p = 0; p < 2; ++p) f.push_back(random_tensor({4, 6}, rng, -1, 1, true));
  auto fn = [&] { return c3s_loss(correlation_matrix(std::vector<Tensor64>{l2_normalize(f[0]), l2_normalize(f[1])}).s); };
  EXPECT_LE(grad_check_leaves(fn, f).max_rel_error, kTol);
  fault::inject("c3s_loss");
  const double broken = grad_check_leaves(fn, f).max_rel_error;
  fault::clear();
  EXPECT_GT(broken, kTol);
}

TEST(GradCheck, FourPointStencilAgrees) {
  Rng rng(7);
  auto x = random_tensor({3, 4}, rng, -1, 1, true);
  auto fn = [&] { return sum(sigmoid(mul(x, x))); };
  EXPECT_LE(grad_check_leaves(fn, {x}, 1e-4, 0, Stencil::kFourPoint).max_rel_error, 1e-8);
}

// Every differentiable op, five seeds, sizes up to 4 x 4 x 6 x 6.
class OpGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  Rng rng(GetParam());
  const std::size_t n = 1 + rng.below(4), c = 1 + rng.below(4);
  const std::size_t hw = 2 * (1 + rng.below(3));

  auto check = [&](const char* name, const std::function<Tensor64()>& fn, std::vector<Tensor64> leaves) {
    const auto r = grad_check_leaves(fn, std::move(leaves));
    EXPECT_LE(r.max_rel_error, kTol) << name << " seed " << GetParam();
  };

  {
    auto a = random_tensor({n, c}, rng, -1, 1, true), b = random_tensor({c, 3}, rng, -1, 1, true);
    Rng pr(rng.next());
    auto p = random_tensor({n, 3}, pr);
    check("matmul", [&] { return sum(mul(matmul(a, b), p)); }, {a, b});
    auto pt = random_tensor({3, c}, pr);
    check("transpose", [&] { return sum(mul(transpose(b), pt)); }, {b});
  }
  {
    auto x = random_tensor({n, c}, rng, -1, 1, true), w = random_tensor({3, c}, rng, -1, 1, true);
    auto bias = random_tensor({3}, rng, -1, 1, true);
    Rng pr(rng.next());
    check("linear", [&] { Rng q = pr; return project(linear(x, w, bias), q); }, {x, w, bias});
  }
  {
    auto a = random_tensor({n, c, hw, hw}, rng, -1, 1, true), b = random_tensor({n, c, hw, hw}, rng, -1, 1, true);
    Rng pr(rng.next());
    check("add/sub/mul/scale", [&] { Rng q = pr; return project(scale(mul(add(a, b), sub(a, b)), 0.7), q); }, {a, b});
    check("mean/reshape", [&] { return mean(mul(reshape(a, {n * c, hw * hw}), reshape(a, {n * c, hw * hw}))); }, {a});
  }
  {
    auto x = random_tensor({n, c, hw, hw}, rng, -1, 1, true), k = random_tensor({2, c, 3, 3}, rng, -1, 1, true);
    auto k2 = random_tensor({2, c, 4, 4}, rng, -1, 1, true);
    Rng pr(rng.next());
    check("conv2d", [&] { Rng q = pr; return project(conv2d(x, k, 1, 1), q); }, {x, k});
    check("conv2d(stride 2)", [&] { Rng q = pr; return project(conv2d(x, k2, 2, 1), q); }, {x, k2});
  }
  {
    auto x = off_kink_tensor({n, c, hw, hw}, rng);
    Rng pr(rng.next());
    check("relu", [&] { Rng q = pr; return project(relu(x), q); }, {x});
    check("sigmoid", [&] { Rng q = pr; return project(sigmoid(x), q); }, {x});
    check("gap", [&] { Rng q = pr; return project(global_pool(x, PoolMode::kAverage), q); }, {x});
    check("upsample", [&] { Rng q = pr; return project(upsample_bilinear2x(x), q); }, {x});
  }
  {
    // Distinct values per plane, spaced far beyond the finite-difference step.
    const std::size_t plane = hw * hw;
    std::vector<double> v(n * c * plane);
    for (std::size_t s = 0; s < v.size(); s += plane) {
      const auto perm = rng.permutation(plane);
      for (std::size_t i = 0; i < plane; ++i) v[s + i] = static_cast<double>(perm[i]) / static_cast<double>(plane);
    }
    Tensor64 x({n, c, hw, hw}, v, true);
    Rng pr(rng.next());
    check("gmp", [&] { Rng q = pr; return project(global_pool(x, PoolMode::kMax), q); }, {x});
  }
  {
    const std::size_t nb = std::max<std::size_t>(n, 2);
    auto x = random_tensor({nb, c, hw, hw}, rng, -1, 1, true);
    auto g = random_tensor({c}, rng, 0.5, 1.5, true), b = random_tensor({c}, rng, -1, 1, true);
    Rng pr(rng.next());
    BatchNormState<double> st(c);
    check("batch_norm(train)", [&] { Rng q = pr; return project(batch_norm(x, g, b, st, Mode::kTrain), q); }, {x, g, b});
    BatchNormState<double> ev(c);
    ev.running_mean.assign(c, 0.2);
    ev.running_var.assign(c, 1.7);
    check("batch_norm(eval)", [&] { Rng q = pr; return project(batch_norm(x, g, b, ev, Mode::kEval), q); }, {x, g, b});
  }
  {
    auto f = random_tensor({n, c + 1}, rng, -1, 1, true);
    auto z = random_tensor({n, 4}, rng, -2, 2, true);
    Rng pr(rng.next());
    check("l2_normalize", [&] { Rng q = pr; return project(l2_normalize(f), q); }, {f});
    check("softmax", [&] { Rng q = pr; return project(softmax(z), q); }, {z});
    check("mean_rows/concat", [&] { Rng q = pr; return project(mean_rows(concat_rows<double>({f, f})), q); }, {f});
    check("concat_columns", [&] { Rng q = pr; return project(concat_columns<double>({f, z}), q); }, {f, z});
  }
  {
    auto u = random_tensor({n, c, hw, hw}, rng, -1, 1, true), m = random_tensor({n, c}, rng, 0, 1, true);
    Rng pr(rng.next());
    check("channel_scale", [&] { Rng q = pr; return project(channel_scale(u, m), q); }, {u, m});
  }
}

INSTANTIATE_TEST_SUITE_P(FiveSeeds, OpGradients, ::testing::Values(1, 2, 3, 4, 5));

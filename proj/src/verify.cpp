#include "crossx/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>

#include "crossx/autodiff.hpp"
#include "crossx/blocks.hpp"
#include "crossx/model.hpp"
#include "crossx/ops.hpp"
#include "crossx/random.hpp"
#include "crossx/regularizers.hpp"
#include "crossx/train.hpp"

namespace crossx {

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> SuiteReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name);
  }
  return out;
}

void print_report(std::ostream& os, const std::string& title, const SuiteReport& report) {
  std::size_t width = 5;
  for (const auto& c : report.checks) width = std::max(width, c.name.size());
  os << title << '\n';
  os << std::left << std::setw(static_cast<int>(width) + 2) << "check" << std::setw(16) << "metric" << std::setw(14)
     << "observed" << std::setw(12) << "tolerance"
     << "result\n";
  for (const auto& c : report.checks) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << c.name << std::setw(16) << c.metric
       << std::setw(14) << std::setprecision(4) << std::scientific << c.observed << std::setw(12)
       << std::setprecision(1) << c.tolerance << std::defaultfloat << (c.passed ? "PASS" : "FAIL") << '\n';
  }
  const auto failed = report.failures();
  os << (failed.empty() ? "all " : "") << report.checks.size() - failed.size() << "/" << report.checks.size()
     << " checks passed in " << std::setprecision(3) << report.seconds << " s";
  if (!failed.empty()) {
    os << "; failing:";
    for (const auto& f : failed) os << ' ' << f;
  }
  os << '\n';
}

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kSeeds = 5;

Tensor64 uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor64(std::move(shape), std::move(v), requires_grad);
}

// Entries with magnitude in [0.1, 1] and random sign, far from the relu kink.
Tensor64 away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Tensor64(std::move(shape), std::move(v), true);
}

// Every H x W plane holds a permutation of evenly spaced values, so maxima are
// unique with a wide margin.
Tensor64 distinct_planes(Shape shape, Rng& rng) {
  const std::size_t plane = shape[2] * shape[3];
  std::vector<double> v(shape_numel(shape));
  for (std::size_t start = 0; start < v.size(); start += plane) {
    const auto perm = rng.permutation(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      v[start + i] = -1.0 + 2.0 * static_cast<double>(perm[i]) / static_cast<double>(plane);
    }
  }
  return Tensor64(std::move(shape), std::move(v), true);
}

// A random linear functional of t, so every output coordinate matters.
Tensor64 project(const Tensor64& t, Rng& rng) {
  return sum(mul(t, uniform_tensor(t.shape(), rng, -1.0, 1.0, false)));
}

Tensor64 project_all(const std::vector<Tensor64>& ts, Rng& rng) {
  Tensor64 total = project(ts.front(), rng);
  for (std::size_t i = 1; i < ts.size(); ++i) total = add(total, project(ts[i], rng));
  return total;
}

// Probabilities from random logits with a fixed spread.
Tensor64 random_distribution(std::size_t n, std::size_t k, Rng& rng) {
  return softmax(uniform_tensor({n, k}, rng, -2.0, 2.0, false));
}

using GradCase = std::function<GradCheckResult(Rng&)>;

void grad_case(SuiteReport& report, const std::string& name, const GradCase& body) {
  CheckResult c{name, "max rel error", 0.0, kGradTolerance, false};
  try {
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
      Rng rng = Rng::derive(seed, {0x6772});
      c.observed = std::max(c.observed, body(rng).max_rel_error);
    }
    c.passed = c.observed <= kGradTolerance;
  } catch (const std::exception&) {
    c.observed = std::numeric_limits<double>::infinity();
  }
  report.checks.push_back(c);
}

GradCheckResult check(const std::function<Tensor64()>& fn, std::vector<Tensor64> leaves) {
  return grad_check_leaves(fn, std::move(leaves), 1e-5);
}

// The toy network of the end-to-end check: 16 x 16 input, three small stages,
// two excitations, three classes, max pooling on the penultimate stage.
ModelSpec toy_spec() {
  ModelSpec s;
  s.image_size = 16;
  s.stage_channels = {4, 8, 16};
  s.excitations = 2;
  s.reduction = 4;
  s.classes = 3;
  s.mid_pooling = PoolMode::kMax;
  return s;
}

// Smallest distance of any relu input or max-pool runner-up to its kink
// accepted for the toy check; central differences with h = 1e-5 cannot cross
// a kink this far away.
constexpr double kKinkMargin = 1e-3;

// Naive references used by the oracle suite.

std::vector<double> naive_conv(const Tensor64& x, const Tensor64& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = 0;
          for (std::size_t i = 0; i < c; ++i)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long sy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                const long sx = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                acc += x.at({b, i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)}) *
                       k.at({o, i, dy, dx});
              }
          out[((b * co + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void oracle_case(SuiteReport& report, const std::string& name, const std::string& metric, double tolerance,
                 const std::function<double()>& body) {
  CheckResult c{name, metric, 0.0, tolerance, false};
  try {
    c.observed = body();
    c.passed = c.observed <= tolerance;
  } catch (const std::exception&) {
    c.observed = std::numeric_limits<double>::infinity();
  }
  report.checks.push_back(c);
}

}  // namespace

SuiteReport run_gradcheck_suite() {
  const auto started = std::chrono::steady_clock::now();
  SuiteReport r;

  grad_case(r, "matmul", [](Rng& rng) {
    auto a = uniform_tensor({3, 4}, rng), b = uniform_tensor({4, 5}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(matmul(a, b), p); }, {a, b});
  });
  grad_case(r, "transpose", [](Rng& rng) {
    auto a = uniform_tensor({3, 5}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(transpose(a), p); }, {a});
  });
  grad_case(r, "linear", [](Rng& rng) {
    auto x = uniform_tensor({3, 4}, rng), w = uniform_tensor({5, 4}, rng), b = uniform_tensor({5}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(linear(x, w, b), p); }, {x, w, b});
  });
  grad_case(r, "elementwise", [](Rng& rng) {
    auto a = uniform_tensor({2, 3, 4}, rng), b = uniform_tensor({2, 3, 4}, rng);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project(scale(sub(mul(a, b), add(a, scale(b, 0.5))), 1.7), p);
        },
        {a, b});
  });
  grad_case(r, "sum/mean/reshape", [](Rng& rng) {
    auto a = uniform_tensor({2, 3, 4}, rng);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return add(add(sum(mul(a, a)), mean(a)), project(reshape(a, {6, 4}), p));
        },
        {a});
  });
  grad_case(r, "conv2d", [](Rng& rng) {
    auto x = uniform_tensor({2, 3, 6, 6}, rng), k3 = uniform_tensor({4, 3, 3, 3}, rng);
    auto k4 = uniform_tensor({4, 3, 4, 4}, rng), k1 = uniform_tensor({4, 3, 1, 1}, rng);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project_all({conv2d(x, k3, 1, 1), conv2d(x, k4, 2, 1), conv2d(x, k1, 1, 0), conv2d(x, k3, 1, 0)},
                             p);
        },
        {x, k3, k4, k1});
  });
  grad_case(r, "relu", [](Rng& rng) {
    auto x = away_from_zero({2, 3, 4, 4}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(relu(x), p); }, {x});
  });
  grad_case(r, "sigmoid", [](Rng& rng) {
    auto x = uniform_tensor({2, 3, 4, 4}, rng, -4.0, 4.0);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(activation(x, Activation::kSigmoid), p); }, {x});
  });
  grad_case(r, "global_pool(gap)", [](Rng& rng) {
    auto x = uniform_tensor({2, 4, 6, 6}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(global_pool(x, PoolMode::kAverage), p); }, {x});
  });
  grad_case(r, "global_pool(gmp)", [](Rng& rng) {
    auto x = distinct_planes({2, 4, 6, 6}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(global_pool(x, PoolMode::kMax), p); }, {x});
  });
  grad_case(r, "upsample_bilinear2x", [](Rng& rng) {
    auto x = uniform_tensor({2, 3, 3, 4}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(upsample_bilinear2x(x), p); }, {x});
  });
  grad_case(r, "batch_norm(train)", [](Rng& rng) {
    auto x = uniform_tensor({4, 3, 5, 5}, rng), g = uniform_tensor({3}, rng, 0.5, 1.5), b = uniform_tensor({3}, rng);
    const auto seed = rng.next();
    BatchNormState<double> state(3);
    return check(
        [&] {
          Rng p(seed);
          return project(batch_norm(x, g, b, state, Mode::kTrain), p);
        },
        {x, g, b});
  });
  grad_case(r, "batch_norm(eval)", [](Rng& rng) {
    auto x = uniform_tensor({2, 3, 4, 4}, rng), g = uniform_tensor({3}, rng, 0.5, 1.5), b = uniform_tensor({3}, rng);
    BatchNormState<double> state(3);
    for (std::size_t c = 0; c < 3; ++c) {
      state.running_mean[c] = rng.uniform(-0.5, 0.5);
      state.running_var[c] = rng.uniform(0.5, 2.0);
    }
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(batch_norm(x, g, b, state, Mode::kEval), p); }, {x, g, b});
  });
  grad_case(r, "l2_normalize", [](Rng& rng) {
    auto f = uniform_tensor({4, 6}, rng);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(l2_normalize(f), p); }, {f});
  });
  grad_case(r, "softmax", [](Rng& rng) {
    auto z = uniform_tensor({3, 5}, rng, -3.0, 3.0);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(softmax(z), p); }, {z});
  });
  grad_case(r, "channel_scale", [](Rng& rng) {
    auto u = uniform_tensor({2, 3, 4, 4}, rng), m = uniform_tensor({2, 3}, rng, 0.0, 1.0);
    const auto seed = rng.next();
    return check([&] { Rng p(seed); return project(channel_scale(u, m), p); }, {u, m});
  });
  grad_case(r, "concat/mean_rows", [](Rng& rng) {
    auto a = uniform_tensor({3, 4}, rng), b = uniform_tensor({3, 2}, rng), c = uniform_tensor({2, 4}, rng);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project_all({concat_columns<double>({a, b}), concat_rows<double>({a, c}), mean_rows(a)}, p);
        },
        {a, b, c});
  });
  grad_case(r, "osme_forward", [](Rng& rng) {
    auto u = uniform_tensor({2, 8, 4, 4}, rng, 0.0, 1.0);
    Rng init(rng.next());
    auto params = OsmeParams<double>::init(8, 2, 4, init);
    // Keep the hidden pre-activations away from the relu kink.
    const auto z = global_pool(u, PoolMode::kAverage);
    for (auto& s : params.squeeze) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const auto hidden = matmul(z, transpose(s));
        const auto pre = hidden.values();
        if (std::all_of(pre.begin(), pre.end(), [](double v) { return std::abs(v) >= 1e-3; })) break;
        s = uniform_tensor(s.shape(), init);
      }
    }
    std::vector<Tensor64> leaves{u};
    for (std::size_t e = 0; e < params.excitations(); ++e) {
      leaves.push_back(params.squeeze[e]);
      leaves.push_back(params.excite[e]);
    }
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project_all(osme_forward(u, params).maps, p);
        },
        leaves);
  });
  grad_case(r, "pooled_head", [](Rng& rng) {
    auto u = distinct_planes({3, 4, 4, 4}, rng);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project_all({pooled_head(u, PoolMode::kAverage, true), pooled_head(u, PoolMode::kMax, true),
                              pooled_head(u, PoolMode::kAverage, false)},
                             p);
        },
        {u});
  });
  grad_case(r, "fpn_merge", [](Rng& rng) {
    auto mid = uniform_tensor({2, 4, 4, 4}, rng), top = uniform_tensor({2, 8, 2, 2}, rng);
    Rng init(rng.next());
    auto params = FpnParams<double>::init(8, 4, init);
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project(fpn_merge(mid, top, params, Mode::kTrain), p);
        },
        {mid, top, params.reduce, params.smooth, params.bn_gamma, params.bn_beta});
  });
  grad_case(r, "correlation_matrix", [](Rng& rng) {
    std::vector<Tensor64> f;
    for (int p = 0; p < 3; ++p) f.push_back(uniform_tensor({4, 5}, rng));
    const auto seed = rng.next();
    return check(
        [&] {
          Rng p(seed);
          return project(correlation_matrix(f).s, p);
        },
        f);
  });
  grad_case(r, "c3s_loss", [](Rng& rng) {
    auto s = uniform_tensor({3, 3}, rng);
    return check([&] { return c3s_loss(s); }, {s});
  });
  grad_case(r, "c3s_loss(pooled maps)", [](Rng& rng) {
    std::vector<Tensor64> maps;
    for (int p = 0; p < 3; ++p) maps.push_back(uniform_tensor({4, 6, 3, 3}, rng));
    return check(
        [&] {
          std::vector<Tensor64> f;
          for (const auto& m : maps) f.push_back(pooled_head(m, PoolMode::kAverage, true));
          return c3s_loss(correlation_matrix(f).s);
        },
        maps);
  });
  grad_case(r, "kl_divergence(softmax)", [](Rng& rng) {
    auto a = uniform_tensor({4, 5}, rng, -2.0, 2.0), b = uniform_tensor({4, 5}, rng, -2.0, 2.0);
    return check([&] { return kl_divergence(softmax(a), softmax(b)); }, {a, b});
  });
  grad_case(r, "cross_entropy(softmax)", [](Rng& rng) {
    auto z = uniform_tensor({4, 5}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels(4);
    for (auto& l : labels) l = rng.below(5);
    return check([&] { return cross_entropy(softmax(z), labels); }, {z});
  });
  grad_case(r, "total_loss", [](Rng& rng) {
    std::vector<Tensor64> s, z;
    for (int i = 0; i < 3; ++i) s.push_back(uniform_tensor({2, 2}, rng, 0.0, 1.0));
    for (int i = 0; i < 3; ++i) z.push_back(uniform_tensor({3, 4}, rng, -2.0, 2.0));
    std::vector<std::size_t> labels{0, 3, 1};
    LossWeights w;
    w.c3s_top = rng.uniform(0.1, 1.0);
    w.c3s_mid = rng.uniform(0.1, 1.0);
    w.c3s_merged = rng.uniform(0.1, 1.0);
    w.cl_mid = rng.uniform(0.1, 1.0);
    w.cl_merged = rng.uniform(0.1, 1.0);
    std::vector<Tensor64> leaves = s;
    leaves.insert(leaves.end(), z.begin(), z.end());
    return check(
        [&] {
          LossInputs<double> in;
          in.data = cross_entropy(combined_prediction<double>(z), labels);
          in.s_top = s[0];
          in.s_mid = s[1];
          in.s_merged = s[2];
          in.prob_top = softmax(z[0]);
          in.prob_mid = softmax(z[1]);
          in.prob_merged = softmax(z[2]);
          return total_loss(in, w).total;
        },
        leaves);
  });
  grad_case(r, "total_loss(toy model)", [](Rng& rng) {
    const ModelSpec spec = toy_spec();
    const std::vector<std::size_t> labels{0, 2};
    auto objective = [&](CrossXModel<double>& model, const Tensor64& x) {
      const auto out = model.forward(x, Mode::kTrain);
      return total_loss(loss_inputs(out, labels), LossWeights{}).total;
    };
    for (int attempt = 0; attempt < 500; ++attempt) {
      CrossXModel<double> model(spec, rng.next());
      auto x = uniform_tensor({2, spec.in_channels, spec.image_size, spec.image_size}, rng);
      {
        KinkProbe probe;
        objective(model, x);
        if (probe.margin() < kKinkMargin) continue;
      }
      std::vector<Tensor64> leaves{x};
      for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
      // Some end-to-end gradients are ~1e-7, where two-point differences at
      // h = 1e-5 sit in rounding noise; the four-point stencil allows h = 1e-4.
      return grad_check_leaves([&] { return objective(model, x); }, leaves, 1e-4, 0, Stencil::kFourPoint);
    }
    throw ContractError("toy model: no draw kept every kink at least 1e-3 away");
  });

  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

SuiteReport run_oracle_suite() {
  const auto started = std::chrono::steady_clock::now();
  SuiteReport r;
  Rng rng(20240601);

  oracle_case(r, "correlation_pair_sum", "max abs diff", 1e-10, [&] {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.below(8), p = 1 + rng.below(4), c = 1 + rng.below(16);
      std::vector<Tensor64> f;
      for (std::size_t e = 0; e < p; ++e) f.push_back(l2_normalize(uniform_tensor({n, c}, rng, -1.0, 1.0, false)));
      const auto s = correlation_matrix(f).s;
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
          double acc = 0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t k = 0; k < c; ++k) acc += f[a].at({i, k}) * f[b].at({j, k});
          acc /= static_cast<double>(n * n);
          worst = std::max(worst, std::abs(acc - s.at({a, b})));
        }
    }
    return worst;
  });
  oracle_case(r, "kl_per_row", "max abs diff", 1e-12, [&] {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.below(6), k = 2 + rng.below(6);
      const auto t = random_distribution(n, k, rng), s = random_distribution(n, k, rng);
      double expected = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < k; ++j) row += t.at({i, j}) * std::log(t.at({i, j}) / s.at({i, j}));
        expected += row / static_cast<double>(n);
      }
      worst = std::max(worst, std::abs(expected - kl_divergence(t, s).item()));
    }
    return worst;
  });
  oracle_case(r, "kl_nonnegative", "-min KL", 1e-12, [&] {
    double lowest = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t k = 2 + rng.below(8);
      lowest = std::min(lowest, kl_divergence(random_distribution(1, k, rng), random_distribution(1, k, rng)).item());
    }
    return -lowest;
  });
  oracle_case(r, "kl_self", "max KL(p||p)", 1e-12, [&] {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto p = random_distribution(3, 2 + rng.below(8), rng);
      worst = std::max(worst, std::abs(kl_divergence(p, p).item()));
    }
    return worst;
  });
  oracle_case(r, "conv2d_naive", "max abs diff", 1e-10, [&] {
    double worst = 0;
    const std::size_t configs[][4] = {{3, 1, 1, 6}, {4, 2, 1, 6}, {1, 1, 0, 5}, {3, 1, 0, 5}, {2, 2, 0, 6}};
    for (const auto& cfg : configs) {
      const auto x = uniform_tensor({2, 3, cfg[3], cfg[3]}, rng, -1.0, 1.0, false);
      const auto k = uniform_tensor({4, 3, cfg[0], cfg[0]}, rng, -1.0, 1.0, false);
      const auto got = conv2d(x, k, cfg[1], cfg[2]);
      worst = std::max(worst, max_abs_diff(got.values(), naive_conv(x, k, cfg[1], cfg[2])));
    }
    return worst;
  });
  oracle_case(r, "matmul_naive", "max abs diff", 1e-12, [&] {
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
      const auto a = uniform_tensor({m, k}, rng, -1.0, 1.0, false), b = uniform_tensor({k, n}, rng, -1.0, 1.0, false);
      std::vector<double> expected(m * n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t l = 0; l < k; ++l) expected[i * n + j] += a.at({i, l}) * b.at({l, j});
      worst = std::max(worst, max_abs_diff(matmul(a, b).values(), expected));
    }
    return worst;
  });
  oracle_case(r, "pool_naive", "max abs diff", 1e-12, [&] {
    const auto x = uniform_tensor({2, 3, 4, 5}, rng, -1.0, 1.0, false);
    std::vector<double> avg(6, 0.0), mx(6, -std::numeric_limits<double>::infinity());
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t xx = 0; xx < 5; ++xx) {
            const double v = x.at({n, c, y, xx});
            avg[n * 3 + c] += v / 20.0;
            mx[n * 3 + c] = std::max(mx[n * 3 + c], v);
          }
    return std::max(max_abs_diff(global_pool(x, PoolMode::kAverage).values(), avg),
                    max_abs_diff(global_pool(x, PoolMode::kMax).values(), mx));
  });
  oracle_case(r, "upsample_naive", "max abs diff", 1e-12, [&] {
    const std::size_t h = 3, w = 4;
    const auto x = uniform_tensor({1, 2, h, w}, rng, -1.0, 1.0, false);
    std::vector<double> expected;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) {
          const double sy = std::clamp((static_cast<double>(y) + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(h - 1));
          const double sx = std::clamp((static_cast<double>(xx) + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(w - 1));
          const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
          const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
          expected.push_back((1 - fy) * ((1 - fx) * x.at({0, c, y0, x0}) + fx * x.at({0, c, y0, x1})) +
                             fy * ((1 - fx) * x.at({0, c, y1, x0}) + fx * x.at({0, c, y1, x1})));
        }
    return max_abs_diff(upsample_bilinear2x(x).values(), expected);
  });
  oracle_case(r, "batch_norm_two_pass", "max abs diff", 1e-10, [&] {
    const auto x = uniform_tensor({3, 2, 4, 4}, rng, -2.0, 2.0, false);
    const auto g = uniform_tensor({2}, rng, 0.5, 1.5, false), b = uniform_tensor({2}, rng, -1.0, 1.0, false);
    BatchNormState<double> state(2);
    const auto y = batch_norm(x, g, b, state, Mode::kTrain);
    double worst = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0, var = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) mean += x.at({n, c, i / 4, i % 4}) / 48.0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) var += std::pow(x.at({n, c, i / 4, i % 4}) - mean, 2) / 48.0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          const double expected = g.at({c}) * (x.at({n, c, i / 4, i % 4}) - mean) / std::sqrt(var + 1e-5) + b.at({c});
          worst = std::max(worst, std::abs(expected - y.at({n, c, i / 4, i % 4})));
        }
      worst = std::max(worst, std::abs(state.running_mean[c] - 0.1 * mean));
      worst = std::max(worst, std::abs(state.running_var[c] - (0.9 + 0.1 * var * 48.0 / 47.0)));
    }
    return worst;
  });
  oracle_case(r, "osme_naive", "max abs diff", 1e-9, [&] {
    const auto u = uniform_tensor({2, 8, 3, 3}, rng, -1.0, 1.0, false);
    Rng init(rng.next());
    const auto params = OsmeParams<double>::init(8, 2, 4, init);
    const auto out = osme_forward(u, params);
    double worst = 0;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t n = 0; n < 2; ++n) {
        std::vector<double> z(8, 0.0), hidden(2, 0.0);
        for (std::size_t c = 0; c < 8; ++c)
          for (std::size_t i = 0; i < 9; ++i) z[c] += u.at({n, c, i / 3, i % 3}) / 9.0;
        for (std::size_t j = 0; j < 2; ++j) {
          for (std::size_t c = 0; c < 8; ++c) hidden[j] += params.squeeze[p].at({j, c}) * z[c];
          hidden[j] = std::max(hidden[j], 0.0);
        }
        for (std::size_t c = 0; c < 8; ++c) {
          double pre = 0;
          for (std::size_t j = 0; j < 2; ++j) pre += params.excite[p].at({c, j}) * hidden[j];
          const double gate = 1.0 / (1.0 + std::exp(-pre));
          for (std::size_t i = 0; i < 9; ++i) {
            worst = std::max(worst, std::abs(gate * u.at({n, c, i / 3, i % 3}) - out.maps[p].at({n, c, i / 3, i % 3})));
          }
        }
      }
    return worst;
  });
  oracle_case(r, "closed_form_losses", "max abs diff", 1e-6, [&] {
    double worst = std::abs(c3s_loss(Tensor64({2, 2}, {1, 0, 0, 1})).item() + 1.0);
    worst = std::max(worst, std::abs(c3s_loss(Tensor64({2, 2}, {1, 1, 1, 1})).item()));
    worst = std::max(worst, std::abs(kl_divergence(Tensor64({1, 2}, {1, 0}), Tensor64({1, 2}, {0.5, 0.5})).item() -
                                     std::log(2.0)));
    const std::vector<std::size_t> labels{2};
    worst = std::max(worst, std::abs(cross_entropy(Tensor64({1, 4}, {0.25, 0.25, 0.25, 0.25}), labels).item() -
                                     std::log(4.0)));
    const auto sm = softmax(Tensor64({1, 2}, {3, 0}));
    worst = std::max(worst, std::abs(sm.at({0, 0}) - 0.952574));
    worst = std::max(worst, std::abs(sm.at({0, 1}) - 0.047426));
    return worst;
  });

  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

}  // namespace crossx

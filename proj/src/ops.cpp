#include "crossx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "crossx/autodiff.hpp"
#include "gemm.hpp"

namespace crossx {

using detail::make_result;
using detail::Node;

PoolMode parse_pool_mode(std::string_view text) {
  if (text == "gap") {
    return PoolMode::kAverage;
  }
  if (text == "gmp") {
    return PoolMode::kMax;
  }
  throw ConfigError("unknown pooling mode '" + std::string(text) + "' (expected gap or gmp)");
}

std::string_view to_string(PoolMode mode) {
  return mode == PoolMode::kAverage ? "gap" : "gmp";
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

// Inputs are only written when they take part in differentiation.
template <typename T>
bool wants(const std::shared_ptr<Node<T>>& n) {
  return n->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "add", [](Node<T>& self) {
    for (const auto& in : self.inputs) {
      if (wants(in)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          in->grad[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] - bv[i];
  }
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "sub", [](Node<T>& self) {
    auto& lhs = self.inputs[0];
    auto& rhs = self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants(lhs)) lhs->grad[i] += self.grad[i];
      if (wants(rhs)) rhs->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "mul", [](Node<T>& self) {
    auto& lhs = self.inputs[0];
    auto& rhs = self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (wants(lhs)) lhs->grad[i] += self.grad[i] * rhs->value[i];
      if (wants(rhs)) rhs->grad[i] += self.grad[i] * lhs->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * factor;
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, "scale", [factor](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in->grad[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) {
    total += v;
  }
  return make_result<T>({1}, {total}, {a.node()}, "sum", [](Node<T>& self) {
    auto& in = self.inputs[0];
    for (T& g : in->grad) {
      g += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_result<T>(std::move(shape), std::move(out), {a.node()}, "reshape", [](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return a.detach();
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  detail::gemm(a.values().data(), false, b.values().data(), false, out.data(), m, k, n, false);
  return make_result<T>({m, n}, std::move(out), {a.node(), b.node()}, "matmul", [m, k, n](Node<T>& self) {
    auto& lhs = self.inputs[0];
    auto& rhs = self.inputs[1];
    // dA = dC * B^T, dB = A^T * dC
    if (wants(lhs)) {
      detail::gemm(self.grad.data(), false, rhs->value.data(), true, lhs->grad.data(), m, n, k, true);
    }
    if (wants(rhs)) {
      detail::gemm(lhs->value.data(), true, self.grad.data(), false, rhs->grad.data(), k, m, n, true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = av[r * cols + c];
    }
  }
  return make_result<T>({cols, rows}, std::move(out), {a.node()}, "transpose", [rows, cols](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        in->grad[r * cols + c] += self.grad[c * rows + r];
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  if (weight.dim(1) != d || bias.numel() != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  std::vector<T> out(n * k);
  auto bv = bias.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  detail::gemm(x.values().data(), false, weight.values().data(), true, out.data(), n, d, k, true);
  return make_result<T>({n, k}, std::move(out), {x.node(), weight.node(), bias.node()}, "linear",
                        [n, d, k](Node<T>& self) {
                          auto& in = self.inputs[0];
                          auto& w = self.inputs[1];
                          auto& b = self.inputs[2];
                          if (wants(in)) {
                            detail::gemm(self.grad.data(), false, w->value.data(), false, in->grad.data(), n, k, d, true);
                          }
                          if (wants(w)) {
                            detail::gemm(self.grad.data(), true, in->value.data(), false, w->grad.data(), k, n, d, true);
                          }
                          if (wants(b)) {
                            for (std::size_t r = 0; r < n; ++r) {
                              for (std::size_t c = 0; c < k; ++c) {
                                b->grad[c] += self.grad[r * k + c];
                              }
                            }
                          }
                        });
}

namespace {
thread_local KinkProbe* active_probe = nullptr;
}  // namespace

KinkProbe::KinkProbe() : margin_(std::numeric_limits<double>::infinity()), previous_(active_probe) {
  active_probe = this;
}

KinkProbe::~KinkProbe() { active_probe = previous_; }

KinkProbe* KinkProbe::current() { return active_probe; }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto xv = x.values();
  if (KinkProbe* probe = KinkProbe::current()) {
    for (T v : xv) probe->observe(std::abs(static_cast<double>(v)));
  }
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > T(0) ? xv[i] : T(0);
  }
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "relu", [](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in->value[i] > T(0)) {
        in->grad[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    // Split by sign so exp never overflows.
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x.node()}, "sigmoid", [](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = self.value[i];
      in->grad[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  return kind == Activation::kRelu ? relu(x) : sigmoid(x);
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * hw;
  if (mode == Mode::kTrain && count < 2) {
    throw DimensionError("batch_norm: degenerate variance, train mode needs at least two values per channel");
  }
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(c);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = xv.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      mu = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = xv.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dv = static_cast<double>(p[i]) - static_cast<double>(mu);
          sq += dv * dv;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(count));
      const double unbiased = sq / static_cast<double>(count - 1);
      const double mom = state.momentum;
      state.running_mean[ch] = static_cast<T>((1.0 - mom) * state.running_mean[ch] + mom * mu);
      state.running_var[ch] = static_cast<T>((1.0 - mom) * state.running_var[ch] + mom * unbiased);
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[ch] = istd;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xv[base + i] - mu) * istd;
        xhat[base + i] = xh;
        out[base + i] = gv[ch] * xh + bv[ch];
      }
    }
  }
  const bool train = mode == Mode::kTrain;
  return make_result<T>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()}, "batch_norm",
      [n, c, hw, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& in = self.inputs[0];
        auto& g = self.inputs[1];
        auto& b = self.inputs[2];
        const double count_d = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += self.grad[base + i];
              sum_dy_xhat += static_cast<double>(self.grad[base + i]) * xhat[base + i];
            }
          }
          if (wants(b)) b->grad[ch] += static_cast<T>(sum_dy);
          if (wants(g)) g->grad[ch] += static_cast<T>(sum_dy_xhat);
          if (!wants(in)) continue;
          const T scale_ch = g->value[ch] * inv_std[ch];
          const T mean_dy = static_cast<T>(sum_dy / count_d);
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count_d);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T dy = self.grad[base + i];
              if (train) {
                in->grad[base + i] += scale_ch * (dy - mean_dy - xhat[base + i] * mean_dy_xhat);
              } else {
                in->grad[base + i] += scale_ch * dy;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& f, double eps) {
  require_rank(f, 2, "l2_normalize");
  const std::size_t n = f.dim(0), c = f.dim(1);
  auto fv = f.values();
  std::vector<T> out(fv.size());
  std::vector<T> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    T sq = 0;
    for (std::size_t j = 0; j < c; ++j) sq += fv[r * c + j] * fv[r * c + j];
    norms[r] = std::sqrt(sq);
    const T denom = std::max(norms[r], static_cast<T>(eps));
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = fv[r * c + j] / denom;
  }
  return make_result<T>(f.shape(), std::move(out), {f.node()}, "l2_normalize",
                        [n, c, eps, norms = std::move(norms)](Node<T>& self) {
                          auto& in = self.inputs[0];
                          for (std::size_t r = 0; r < n; ++r) {
                            const T* y = self.value.data() + r * c;
                            const T* dy = self.grad.data() + r * c;
                            T* dx = in->grad.data() + r * c;
                            if (norms[r] > static_cast<T>(eps)) {
                              T proj = 0;
                              for (std::size_t j = 0; j < c; ++j) proj += y[j] * dy[j];
                              for (std::size_t j = 0; j < c; ++j) dx[j] += (dy[j] - y[j] * proj) / norms[r];
                            } else {
                              for (std::size_t j = 0; j < c; ++j) dx[j] += dy[j] / static_cast<T>(eps);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto lv = logits.values();
  std::vector<T> out(lv.size());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = lv.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(row[j] - mx);
      total += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= total;
  }
  return make_result<T>(logits.shape(), std::move(out), {logits.node()}, "softmax", [n, k](Node<T>& self) {
    auto& in = self.inputs[0];
    for (std::size_t r = 0; r < n; ++r) {
      const T* y = self.value.data() + r * k;
      const T* dy = self.grad.data() + r * k;
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < k; ++j) in->grad[r * k + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& u, const Tensor<T>& m) {
  require_rank(u, 4, "channel_scale");
  const std::size_t n = u.dim(0), c = u.dim(1), hw = u.dim(2) * u.dim(3);
  if (m.shape() != Shape{n, c}) {
    throw DimensionError("channel_scale: gates " + shape_str(m.shape()) + " do not match maps " +
                         shape_str(u.shape()));
  }
  auto uv = u.values();
  auto mv = m.values();
  std::vector<T> out(uv.size());
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    for (std::size_t i = 0; i < hw; ++i) {
      out[nc * hw + i] = mv[nc] * uv[nc * hw + i];
    }
  }
  return make_result<T>(u.shape(), std::move(out), {u.node(), m.node()}, "channel_scale",
                        [n, c, hw](Node<T>& self) {
                          auto& maps = self.inputs[0];
                          auto& gates = self.inputs[1];
                          for (std::size_t nc = 0; nc < n * c; ++nc) {
                            const T* dy = self.grad.data() + nc * hw;
                            if (wants(maps)) {
                              for (std::size_t i = 0; i < hw; ++i) maps->grad[nc * hw + i] += dy[i] * gates->value[nc];
                            }
                            if (wants(gates)) {
                              T acc = 0;
                              for (std::size_t i = 0; i < hw; ++i) acc += dy[i] * maps->value[nc * hw + i];
                              gates->grad[nc] += acc;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_columns(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw DimensionError("concat_columns: no inputs");
  }
  const std::size_t n = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_columns");
    if (p.dim(0) != n) {
      throw DimensionError("concat_columns: row counts differ");
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
    inputs.push_back(p.node());
  }
  std::vector<T> out(n * total);
  std::size_t col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto pv = parts[i].values();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + col);
    }
    col += widths[i];
  }
  return make_result<T>({n, total}, std::move(out), std::move(inputs), "concat_columns",
                        [n, total, widths = std::move(widths)](Node<T>& self) {
                          std::size_t col0 = 0;
                          for (std::size_t i = 0; i < widths.size(); ++i) {
                            auto& in = self.inputs[i];
                            if (wants(in)) {
                              for (std::size_t r = 0; r < n; ++r) {
                                for (std::size_t j = 0; j < widths[i]; ++j) {
                                  in->grad[r * widths[i] + j] += self.grad[r * total + col0 + j];
                                }
                              }
                            }
                            col0 += widths[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw DimensionError("concat_rows: no inputs");
  }
  const std::size_t c = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::vector<T> out;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) {
      throw DimensionError("concat_rows: column counts differ");
    }
    rows += p.dim(0);
    inputs.push_back(p.node());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result<T>({rows, c}, std::move(out), std::move(inputs), "concat_rows", [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (wants(in)) {
        for (std::size_t i = 0; i < in->value.size(); ++i) in->grad[i] += self.grad[offset + i];
      }
      offset += in->value.size();
    }
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& f) {
  require_rank(f, 2, "mean_rows");
  const std::size_t n = f.dim(0), c = f.dim(1);
  auto fv = f.values();
  std::vector<T> out(c, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += fv[r * c + j];
  }
  for (T& v : out) v /= static_cast<T>(n);
  return make_result<T>({1, c}, std::move(out), {f.node()}, "mean_rows", [n, c](Node<T>& self) {
    auto& in = self.inputs[0];
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c; ++j) in->grad[r * c + j] += self.grad[j] * inv;
    }
  });
}

#define CROSSX_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                     \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, \
                                Mode);                                                             \
  template Tensor<T> l2_normalize(const Tensor<T>&, double);                                       \
  template Tensor<T> softmax(const Tensor<T>&);                                                    \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> concat_columns(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> mean_rows(const Tensor<T>&);

CROSSX_INSTANTIATE_OPS(float)
CROSSX_INSTANTIATE_OPS(double)

}  // namespace crossx

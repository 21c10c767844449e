#include <algorithm>
#include <limits>
#include <cmath>
#include <string>

#include "crossx/autodiff.hpp"
#include "crossx/ops.hpp"
#include "gemm.hpp"

namespace crossx {

using detail::make_result;
using detail::Node;

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t co, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (k > padded) {
    throw DimensionError(std::string("conv2d: kernel larger than padded ") + axis);
  }
  if ((padded - k) % stride != 0) {
    throw DimensionError(std::string("conv2d: non-integral output ") + axis + " (" + std::to_string(in) +
                         " + 2*" + std::to_string(pad) + " - " + std::to_string(k) + ") / " +
                         std::to_string(stride));
  }
  return (padded - k) / stride + 1;
}

// Unfolds one sample [C x H x W] into [C*kh*kw x ho*wo].
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ch * g.kh + ky) * g.kw + kx) * g.out_plane();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ch * g.kh + ky) * g.kw + kx) * g.out_plane();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = dx + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_lo, w_hi;
};

// Half-pixel bilinear taps for an exact x2 enlargement of an axis.
AxisTaps upsample_taps(std::size_t in) {
  AxisTaps t;
  const std::size_t out = 2 * in;
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::max(src, 0.0);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    t.lo.push_back(i0);
    t.hi.push_back(i1);
    t.w_lo.push_back(1.0 - frac);
    t.w_hi.push_back(frac);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected NCHW input and 4-d kernel, got " + shape_str(x.shape()) + " and " +
                         shape_str(kernel.shape()));
  }
  if (stride < 1) {
    throw DimensionError("conv2d: stride must be at least 1");
  }
  if (kernel.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " channels, input has " +
                         std::to_string(x.dim(1)));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                 stride, pad, 0, 0};
  g.ho = conv_extent(g.h, g.kh, stride, pad, "height");
  g.wo = conv_extent(g.w, g.kw, stride, pad, "width");

  auto xv = x.values();
  auto kv = kernel.values();
  std::vector<T> out(g.n * g.co * g.out_plane());
  std::vector<T> cols;
  const bool pointwise = g.is_pointwise();
  const bool keep_cols = !pointwise && kernel.requires_grad();
  std::vector<T> scratch(pointwise ? 0 : g.patch() * g.out_plane());
  if (keep_cols) {
    cols.resize(g.n * g.patch() * g.out_plane());
  }
  for (std::size_t s = 0; s < g.n; ++s) {
    const T* sample = xv.data() + s * g.c * g.h * g.w;
    const T* col = sample;
    if (!pointwise) {
      T* dst = keep_cols ? cols.data() + s * g.patch() * g.out_plane() : scratch.data();
      im2col(sample, g, dst);
      col = dst;
    }
    detail::gemm(kv.data(), false, col, false, out.data() + s * g.co * g.out_plane(), g.co, g.patch(),
                 g.out_plane(), false);
  }
  return make_result<T>(
      {g.n, g.co, g.ho, g.wo}, std::move(out), {x.node(), kernel.node()}, "conv2d",
      [g, cols = std::move(cols)](Node<T>& self) {
        auto& in = self.inputs[0];
        auto& k = self.inputs[1];
        const bool pointwise = g.is_pointwise();
        std::vector<T> dcol(pointwise ? 0 : g.patch() * g.out_plane());
        for (std::size_t s = 0; s < g.n; ++s) {
          const T* dy = self.grad.data() + s * g.co * g.out_plane();
          if (k->requires_grad) {
            const T* col = pointwise ? in->value.data() + s * g.c * g.h * g.w
                                     : cols.data() + s * g.patch() * g.out_plane();
            // dK += dY * col^T
            detail::gemm(dy, false, col, true, k->grad.data(), g.co, g.out_plane(), g.patch(), true);
          }
          if (in->requires_grad) {
            T* dx = in->grad.data() + s * g.c * g.h * g.w;
            if (pointwise) {
              detail::gemm(k->value.data(), true, dy, false, dx, g.patch(), g.co, g.out_plane(), true);
            } else {
              detail::gemm(k->value.data(), true, dy, false, dcol.data(), g.patch(), g.co, g.out_plane(), false);
              col2im_add(dcol.data(), g, dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& x, PoolMode mode) {
  if (x.rank() != 4) {
    throw DimensionError("global_pool: expected NCHW input, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xv = x.values();
  std::vector<T> out(n * c);
  if (mode == PoolMode::kAverage) {
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += xv[nc * hw + i];
      out[nc] = acc / static_cast<T>(hw);
    }
    return make_result<T>({n, c}, std::move(out), {x.node()}, "global_avg_pool", [n, c, hw](Node<T>& self) {
      auto& in = self.inputs[0];
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T g = self.grad[nc] * inv;
        for (std::size_t i = 0; i < hw; ++i) in->grad[nc * hw + i] += g;
      }
    });
  }
  std::vector<std::size_t> argmax(n * c);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i) {
      if (xv[nc * hw + i] > xv[nc * hw + best]) best = i;
    }
    argmax[nc] = best;
    out[nc] = xv[nc * hw + best];
  }
  if (KinkProbe* probe = KinkProbe::current(); probe && hw > 1) {
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      double runner_up = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < hw; ++i) {
        if (i != argmax[nc]) runner_up = std::max(runner_up, static_cast<double>(xv[nc * hw + i]));
      }
      probe->observe(static_cast<double>(out[nc]) - runner_up);
    }
  }
  return make_result<T>({n, c}, std::move(out), {x.node()}, "global_max_pool",
                        [hw, argmax = std::move(argmax)](Node<T>& self) {
                          auto& in = self.inputs[0];
                          for (std::size_t nc = 0; nc < argmax.size(); ++nc) {
                            in->grad[nc * hw + argmax[nc]] += self.grad[nc];
                          }
                        });
}

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw DimensionError("upsample_bilinear2x: expected NCHW input, got " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  AxisTaps ty = upsample_taps(h);
  AxisTaps tx = upsample_taps(w);
  auto xv = x.values();
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const T* r0 = src + ty.lo[oy] * w;
      const T* r1 = src + ty.hi[oy] * w;
      const T wy0 = static_cast<T>(ty.w_lo[oy]), wy1 = static_cast<T>(ty.w_hi[oy]);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T wx0 = static_cast<T>(tx.w_lo[ox]), wx1 = static_cast<T>(tx.w_hi[ox]);
        dst[oy * ow + ox] = wy0 * (wx0 * r0[tx.lo[ox]] + wx1 * r0[tx.hi[ox]]) +
                            wy1 * (wx0 * r1[tx.lo[ox]] + wx1 * r1[tx.hi[ox]]);
      }
    }
  }
  Shape shape{x.dim(0), x.dim(1), oh, ow};
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, "upsample_bilinear2x",
                        [planes, h, w, ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
                          auto& in = self.inputs[0];
                          const std::size_t oh = 2 * h, ow = 2 * w;
                          for (std::size_t p = 0; p < planes; ++p) {
                            const T* dy = self.grad.data() + p * oh * ow;
                            T* dx = in->grad.data() + p * h * w;
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                              T* r0 = dx + ty.lo[oy] * w;
                              T* r1 = dx + ty.hi[oy] * w;
                              const T wy0 = static_cast<T>(ty.w_lo[oy]), wy1 = static_cast<T>(ty.w_hi[oy]);
                              for (std::size_t ox = 0; ox < ow; ++ox) {
                                const T g = dy[oy * ow + ox];
                                const T wx0 = static_cast<T>(tx.w_lo[ox]), wx1 = static_cast<T>(tx.w_hi[ox]);
                                r0[tx.lo[ox]] += g * wy0 * wx0;
                                r0[tx.hi[ox]] += g * wy0 * wx1;
                                r1[tx.lo[ox]] += g * wy1 * wx0;
                                r1[tx.hi[ox]] += g * wy1 * wx1;
                              }
                            }
                          }
                        });
}

#define CROSSX_INSTANTIATE_CONV(T)                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> global_pool(const Tensor<T>&, PoolMode);                              \
  template Tensor<T> upsample_bilinear2x(const Tensor<T>&);

CROSSX_INSTANTIATE_CONV(float)
CROSSX_INSTANTIATE_CONV(double)

}  // namespace crossx

/* Copyright 2026 The VidConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "vidconv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace vidconv {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Output positions o in [lo, hi] whose input index o*stride + offset lies
// inside [0, extent).
struct ValidRange {
  std::int64_t lo;
  std::int64_t hi;
};

ValidRange valid_range(std::int64_t offset, std::int64_t stride,
                       std::int64_t extent, std::int64_t out_extent) {
  const std::int64_t lo = std::max<std::int64_t>(0, -floor_div(offset, stride));
  const std::int64_t hi =
      std::min<std::int64_t>(out_extent - 1, floor_div(extent - 1 - offset, stride));
  return {lo, hi};
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo, groups, cin_g, cout_g;
  ConvSpec spec;
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                           const BasicTensor<T>& bias, const ConvSpec& spec) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be rank 4, got " + shape_str(weight.shape()));
  ConvGeometry g{};
  g.spec = spec;
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.groups = spec.groups;
  if (g.groups <= 0) throw ShapeError("conv2d: groups must be positive");
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ShapeError("conv2d: groups " + std::to_string(g.groups) +
                     " must divide in/out channels " + std::to_string(g.cin) +
                     "/" + std::to_string(g.cout));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (weight.dim(1) != g.cin_g) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) +
                     " incompatible with " + std::to_string(g.cin) +
                     " input channels in " + std::to_string(g.groups) + " groups");
  }
  if (spec.kernel.h != g.kh || spec.kernel.w != g.kw) {
    throw ShapeError("conv2d: spec kernel does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.cout) + "]");
  }
  const Extent2 out = conv_output_size({g.h, g.w}, spec);
  g.ho = out.h;
  g.wo = out.w;
  return g;
}

// col: [cin_g * kh * kw, ho * wo] for one sample and one group.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const auto& s = g.spec;
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    const T* src = in + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        const std::int64_t xoff = j * s.dilation.w - s.padding.w;
        const auto xr = valid_range(xoff, s.stride.w, g.w, g.wo);
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          T* dst = row + oy * g.wo;
          const std::int64_t iy = oy * s.stride.h - s.padding.h + i * s.dilation.h;
          if (iy < 0 || iy >= g.h || xr.lo > xr.hi) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* srow = src + iy * g.w;
          std::fill(dst, dst + xr.lo, T(0));
          for (std::int64_t ox = xr.lo; ox <= xr.hi; ++ox) {
            dst[ox] = srow[ox * s.stride.w + xoff];
          }
          std::fill(dst + xr.hi + 1, dst + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in_grad) {
  const auto& s = g.spec;
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    T* dst = in_grad + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        const std::int64_t xoff = j * s.dilation.w - s.padding.w;
        const auto xr = valid_range(xoff, s.stride.w, g.w, g.wo);
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * s.stride.h - s.padding.h + i * s.dilation.h;
          if (iy < 0 || iy >= g.h) continue;
          T* drow = dst + iy * g.w;
          const T* srow = row + oy * g.wo;
          for (std::int64_t ox = xr.lo; ox <= xr.hi; ++ox) {
            drow[ox * s.stride.w + xoff] += srow[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  const auto& s = g.spec;
  return g.kh == 1 && g.kw == 1 && s.stride.h == 1 && s.stride.w == 1 &&
         s.padding.h == 0 && s.padding.w == 0;
}

template <typename T>
void conv_forward_gemm(const T* x, const T* w, T* y, const ConvGeometry& g) {
  const std::int64_t k = g.cin_g * g.kh * g.kw;
  const std::int64_t plane = g.ho * g.wo;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(k * plane));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t gi = 0; gi < g.groups; ++gi) {
      const T* in = x + (n * g.cin + gi * g.cin_g) * g.h * g.w;
      const T* cols = in;
      if (!pointwise) {
        im2col(in, g, col.data());
        cols = col.data();
      }
      ConstMapMat<T> wg(w + gi * g.cout_g * k, g.cout_g, k);
      ConstMapMat<T> cm(cols, k, plane);
      MapMat<T> ym(y + (n * g.cout + gi * g.cout_g) * plane, g.cout_g, plane);
      ym.noalias() = wg * cm;
    }
  }
}

template <typename T>
void conv_backward_gemm(const T* x, const T* w, const T* dy, T* dx, T* dw,
                        const ConvGeometry& g) {
  const std::int64_t k = g.cin_g * g.kh * g.kw;
  const std::int64_t plane = g.ho * g.wo;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(k * plane));
  std::vector<T> dcol(pointwise || dx == nullptr ? 0 : static_cast<std::size_t>(k * plane));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t gi = 0; gi < g.groups; ++gi) {
      const std::int64_t in_off = (n * g.cin + gi * g.cin_g) * g.h * g.w;
      ConstMapMat<T> dym(dy + (n * g.cout + gi * g.cout_g) * plane, g.cout_g, plane);
      ConstMapMat<T> wg(w + gi * g.cout_g * k, g.cout_g, k);
      if (dw != nullptr) {
        const T* cols = x + in_off;
        if (!pointwise) {
          im2col(x + in_off, g, col.data());
          cols = col.data();
        }
        ConstMapMat<T> cm(cols, k, plane);
        MapMat<T> dwg(dw + gi * g.cout_g * k, g.cout_g, k);
        dwg.noalias() += dym * cm.transpose();
      }
      if (dx != nullptr) {
        if (pointwise) {
          MapMat<T> dxm(dx + in_off, k, plane);
          dxm.noalias() += wg.transpose() * dym;
        } else {
          MapMat<T> dcm(dcol.data(), k, plane);
          dcm.noalias() = wg.transpose() * dym;
          col2im_add(dcol.data(), g, dx + in_off);
        }
      }
    }
  }
}

struct TapRange {
  std::int64_t xoff, yoff;
  ValidRange xr, yr;
};

std::vector<TapRange> tap_ranges(const ConvGeometry& g) {
  const auto& s = g.spec;
  std::vector<TapRange> taps(static_cast<std::size_t>(g.kh * g.kw));
  for (std::int64_t i = 0; i < g.kh; ++i) {
    for (std::int64_t j = 0; j < g.kw; ++j) {
      auto& t = taps[static_cast<std::size_t>(i * g.kw + j)];
      t.xoff = j * s.dilation.w - s.padding.w;
      t.yoff = i * s.dilation.h - s.padding.h;
      t.xr = valid_range(t.xoff, s.stride.w, g.w, g.wo);
      t.yr = valid_range(t.yoff, s.stride.h, g.h, g.ho);
    }
  }
  return taps;
}

// groups == Cin == Cout: one filter per channel, computed directly.
template <typename T>
void conv_forward_depthwise(const T* x, const T* w, T* y, const ConvGeometry& g) {
  const auto& s = g.spec;
  const auto taps = tap_ranges(g);
  const std::int64_t ntaps = g.kh * g.kw;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* in = x + (n * g.cin + c) * g.h * g.w;
      T* out = y + (n * g.cout + c) * g.ho * g.wo;
      const T* wc = w + c * ntaps;
      std::fill(out, out + g.ho * g.wo, T(0));
      for (std::int64_t k = 0; k < ntaps; ++k) {
        const TapRange& t = taps[static_cast<std::size_t>(k)];
        const T wv = wc[k];
        for (std::int64_t oy = t.yr.lo; oy <= t.yr.hi; ++oy) {
          const T* irow = in + (oy * s.stride.h + t.yoff) * g.w;
          T* orow = out + oy * g.wo;
          if (s.stride.w == 1) {
            const T* src = irow + t.xoff;
            for (std::int64_t ox = t.xr.lo; ox <= t.xr.hi; ++ox) orow[ox] += wv * src[ox];
          } else {
            for (std::int64_t ox = t.xr.lo; ox <= t.xr.hi; ++ox) {
              orow[ox] += wv * irow[ox * s.stride.w + t.xoff];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_depthwise(const T* x, const T* w, const T* dy, T* dx, T* dw,
                             const ConvGeometry& g) {
  const auto& s = g.spec;
  const auto taps = tap_ranges(g);
  const std::int64_t ntaps = g.kh * g.kw;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* in = x + (n * g.cin + c) * g.h * g.w;
      const T* gout = dy + (n * g.cout + c) * g.ho * g.wo;
      T* gin = dx != nullptr ? dx + (n * g.cin + c) * g.h * g.w : nullptr;
      const T* wc = w + c * ntaps;
      T* dwc = dw != nullptr ? dw + c * ntaps : nullptr;
      for (std::int64_t k = 0; k < ntaps; ++k) {
        const TapRange& t = taps[static_cast<std::size_t>(k)];
        const T wv = wc[k];
        T acc = T(0);
        for (std::int64_t oy = t.yr.lo; oy <= t.yr.hi; ++oy) {
          const std::int64_t row = (oy * s.stride.h + t.yoff) * g.w + t.xoff;
          const T* grow = gout + oy * g.wo;
          if (s.stride.w == 1) {
            const T* irow = in + row;
            if (dwc != nullptr) {
#pragma omp simd reduction(+ : acc)
              for (std::int64_t ox = t.xr.lo; ox <= t.xr.hi; ++ox) acc += grow[ox] * irow[ox];
            }
            if (gin != nullptr) {
              T* girow = gin + row;
              for (std::int64_t ox = t.xr.lo; ox <= t.xr.hi; ++ox) girow[ox] += wv * grow[ox];
            }
          } else {
            for (std::int64_t ox = t.xr.lo; ox <= t.xr.hi; ++ox) {
              const std::int64_t ix = row + ox * s.stride.w;
              acc += grow[ox] * in[ix];
              if (gin != nullptr) gin[ix] += wv * grow[ox];
            }
          }
        }
        if (dwc != nullptr) dwc[k] += acc;
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t stride, std::int64_t dilation,
                                std::int64_t padding) {
  if (kernel <= 0 || stride <= 0 || dilation <= 0 || padding < 0) {
    throw ShapeError("conv: kernel/stride/dilation must be positive, padding >= 0");
  }
  const std::int64_t span = in + 2 * padding - dilation * (kernel - 1) - 1;
  const std::int64_t out = span < 0 ? 0 : span / stride + 1;
  if (out < 1) {
    throw ShapeError("conv: non-positive output extent for input " +
                     std::to_string(in) + ", kernel " + std::to_string(kernel) +
                     ", dilation " + std::to_string(dilation) + ", padding " +
                     std::to_string(padding));
  }
  return out;
}

Extent2 conv_output_size(Extent2 in, const ConvSpec& spec) {
  return {conv_output_extent(in.h, spec.kernel.h, spec.stride.h,
                             spec.dilation.h, spec.padding.h),
          conv_output_extent(in.w, spec.kernel.w, spec.stride.w,
                             spec.dilation.w, spec.padding.w)};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(x, weight, bias, spec);
  const bool depthwise = g.cin_g == 1 && g.cout_g == 1;
  const std::int64_t plane = g.ho * g.wo;
  std::vector<T> out(static_cast<std::size_t>(g.n * g.cout * plane));
  if (depthwise) {
    conv_forward_depthwise(x.values().data(), weight.values().data(), out.data(), g);
  } else {
    conv_forward_gemm(x.values().data(), weight.values().data(), out.data(), g);
  }
  if (bias.defined()) {
    const auto& b = bias.values();
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (n * g.cout + c) * plane;
        const T bv = b[static_cast<std::size_t>(c)];
        for (std::int64_t p = 0; p < plane; ++p) o[p] += bv;
      }
    }
  }
  return make_result<T>(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), {&x, &weight, &bias},
      [g, depthwise](TensorNode<T>& self) {
        auto* xn = self.parents[0].get();
        auto* wn = self.parents[1].get();
        auto* tx = self.tracked_parent(0);
        auto* tw = self.tracked_parent(1);
        auto* tb = self.tracked_parent(2);
        const T* dy = self.grad.data();
        const std::int64_t plane = g.ho * g.wo;
        if (tb != nullptr) {
          auto& db = tb->ensure_grad();
          for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t c = 0; c < g.cout; ++c) {
              const T* d = dy + (n * g.cout + c) * plane;
              T acc = T(0);
              for (std::int64_t p = 0; p < plane; ++p) acc += d[p];
              db[static_cast<std::size_t>(c)] += acc;
            }
          }
        }
        if (tx == nullptr && tw == nullptr) return;
        T* dx = tx != nullptr ? tx->ensure_grad().data() : nullptr;
        T* dw = tw != nullptr ? tw->ensure_grad().data() : nullptr;
        if (depthwise) {
          conv_backward_depthwise(xn->data.data(), wn->data.data(), dy, dx, dw, g);
        } else {
          conv_backward_gemm(xn->data.data(), wn->data.data(), dy, dx, dw, g);
        }
      });
}

template <typename T>
BasicTensor<T> layer_norm_channels(const BasicTensor<T>& x,
                                   const BasicTensor<T>& gamma,
                                   const BasicTensor<T>& beta, T eps) {
  if (x.rank() != 4) throw ShapeError("layer_norm_channels: input must be [N,C,H,W]");
  if (!(eps > T(0))) throw ShapeError("layer_norm_channels: eps must be positive");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    throw ShapeError("layer_norm_channels: gamma/beta must be [" + std::to_string(c) +
                     "] for input " + shape_str(x.shape()));
  }
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * plane), T(0));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * plane), T(0));
  std::vector<T> out(xv.size());
  const T inv_c = T(1) / static_cast<T>(c);
  for (std::int64_t b = 0; b < n; ++b) {
    T* m = mean->data() + b * plane;
    T* r = rstd->data() + b * plane;
    const T* xb = xv.data() + b * c * plane;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) m[p] += row[p];
    }
    for (std::int64_t p = 0; p < plane; ++p) m[p] *= inv_c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const T d = row[p] - m[p];
        r[p] += d * d;
      }
    }
    for (std::int64_t p = 0; p < plane; ++p) r[p] = T(1) / std::sqrt(r[p] * inv_c + eps);
    T* ob = out.data() + b * c * plane;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      T* orow = ob + ch * plane;
      const T gch = gv[static_cast<std::size_t>(ch)];
      const T bch = bv[static_cast<std::size_t>(ch)];
      for (std::int64_t p = 0; p < plane; ++p) {
        orow[p] = (row[p] - m[p]) * r[p] * gch + bch;
      }
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, c, plane, mean, rstd](TensorNode<T>& self) {
        const auto& xv = self.parents[0]->data;
        const auto& gv = self.parents[1]->data;
        auto* tx = self.tracked_parent(0);
        auto* tg = self.tracked_parent(1);
        auto* tb = self.tracked_parent(2);
        const auto& dy = self.grad;
        const T inv_c = T(1) / static_cast<T>(c);
        std::vector<T> xhat(static_cast<std::size_t>(c * plane));
        std::vector<T> s1(static_cast<std::size_t>(plane)), s2(static_cast<std::size_t>(plane));
        for (std::int64_t b = 0; b < n; ++b) {
          const T* m = mean->data() + b * plane;
          const T* r = rstd->data() + b * plane;
          const T* xb = xv.data() + b * c * plane;
          const T* db = dy.data() + b * c * plane;
          std::fill(s1.begin(), s1.end(), T(0));
          std::fill(s2.begin(), s2.end(), T(0));
          for (std::int64_t ch = 0; ch < c; ++ch) {
            T* xh = xhat.data() + ch * plane;
            const T* row = xb + ch * plane;
            const T* drow = db + ch * plane;
            const T gch = gv[static_cast<std::size_t>(ch)];
            T dg = T(0), dbeta = T(0);
            for (std::int64_t p = 0; p < plane; ++p) {
              xh[p] = (row[p] - m[p]) * r[p];
              const T gy = drow[p] * gch;
              s1[static_cast<std::size_t>(p)] += gy;
              s2[static_cast<std::size_t>(p)] += gy * xh[p];
              dg += drow[p] * xh[p];
              dbeta += drow[p];
            }
            if (tg != nullptr) tg->ensure_grad()[static_cast<std::size_t>(ch)] += dg;
            if (tb != nullptr) tb->ensure_grad()[static_cast<std::size_t>(ch)] += dbeta;
          }
          if (tx == nullptr) continue;
          T* dx = tx->ensure_grad().data() + b * c * plane;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* xh = xhat.data() + ch * plane;
            const T* drow = db + ch * plane;
            T* dxr = dx + ch * plane;
            const T gch = gv[static_cast<std::size_t>(ch)];
            for (std::int64_t p = 0; p < plane; ++p) {
              const T gy = drow[p] * gch;
              dxr[p] += r[p] * (gy - s1[static_cast<std::size_t>(p)] * inv_c -
                                xh[p] * s2[static_cast<std::size_t>(p)] * inv_c);
            }
          }
        }
      });
}

namespace {

template <typename T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoef = 0.044715;
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x, GeluMode mode) {
  const auto& xv = x.values();
  const auto n = static_cast<Eigen::Index>(xv.size());
  std::vector<T> out(xv.size());
  ConstArrayMap<T> xa(xv.data(), n);
  ArrayMap<T> ya(out.data(), n);
  if (mode == GeluMode::kTanh) {
    ya = T(0.5) * xa * (T(1) + (T(kSqrt2OverPi) * (xa + T(kGeluCoef) * xa.cube())).tanh());
  } else {
    ya = T(0.5) * xa * (T(1) + (xa * T(kInvSqrt2)).unaryExpr([](T v) { return std::erf(v); }));
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [mode](TensorNode<T>& self) {
    const auto& xv = self.parents[0]->data;
    const auto n = static_cast<Eigen::Index>(xv.size());
    ConstArrayMap<T> xa(xv.data(), n);
    ConstArrayMap<T> up(self.grad.data(), n);
    ArrayMap<T> dx(self.parents[0]->ensure_grad().data(), n);
    if (mode == GeluMode::kTanh) {
      const auto t = (T(kSqrt2OverPi) * (xa + T(kGeluCoef) * xa.cube())).tanh().eval();
      dx += up * (T(0.5) * (T(1) + t) + T(0.5) * xa * (T(1) - t.square()) * T(kSqrt2OverPi) *
                                             (T(1) + T(3 * kGeluCoef) * xa.square()));
    } else {
      dx += up * (T(0.5) * (T(1) + (xa * T(kInvSqrt2)).unaryExpr([](T v) { return std::erf(v); })) +
                  xa * (T(-0.5) * xa.square()).exp() * T(kInvSqrt2Pi));
    }
  });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be [N,C,H,W]");
  const std::int64_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(rows));
  const T inv = T(1) / static_cast<T>(plane);
  for (std::int64_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::int64_t p = 0; p < plane; ++p) acc += xv[static_cast<std::size_t>(r * plane + p)];
    out[static_cast<std::size_t>(r)] = acc * inv;
  }
  return make_result<T>({x.dim(0), x.dim(1)}, std::move(out), {&x},
                        [rows, plane, inv](TensorNode<T>& self) {
                          auto& dx = self.parents[0]->ensure_grad();
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const T g = self.grad[static_cast<std::size_t>(r)] * inv;
                            for (std::int64_t p = 0; p < plane; ++p) {
                              dx[static_cast<std::size_t>(r * plane + p)] += g;
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  const std::int64_t n = x.dim(0), k = x.dim(1), o = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("linear: bias must be [" + std::to_string(o) + "]");
  }
  std::vector<T> out(static_cast<std::size_t>(n * o));
  MapMat<T> ym(out.data(), n, o);
  ym.noalias() = ConstMapMat<T>(x.values().data(), n, k) *
                 ConstMapMat<T>(weight.values().data(), o, k).transpose();
  if (bias.defined()) {
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t j = 0; j < o; ++j) {
        out[static_cast<std::size_t>(r * o + j)] += bias.values()[static_cast<std::size_t>(j)];
      }
    }
  }
  return make_result<T>({n, o}, std::move(out), {&x, &weight, &bias},
                        [n, k, o](TensorNode<T>& self) {
                          ConstMapMat<T> dy(self.grad.data(), n, o);
                          if (auto* tx = self.tracked_parent(0)) {
                            MapMat<T>(tx->ensure_grad().data(), n, k).noalias() +=
                                dy * ConstMapMat<T>(self.parents[1]->data.data(), o, k);
                          }
                          if (auto* tw = self.tracked_parent(1)) {
                            MapMat<T>(tw->ensure_grad().data(), o, k).noalias() +=
                                dy.transpose() * ConstMapMat<T>(self.parents[0]->data.data(), n, k);
                          }
                          if (auto* tb = self.tracked_parent(2)) {
                            auto& db = tb->ensure_grad();
                            for (std::int64_t r = 0; r < n; ++r) {
                              for (std::int64_t j = 0; j < o; ++j) {
                                db[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(r * o + j)];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* t = self.tracked_parent(p)) {
        auto& g = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ta = self.tracked_parent(0)) {
      auto& g = ta->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (auto* tb = self.tracked_parent(1)) {
      auto& g = tb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const BasicTensor<T>& scale) {
  if ((x.rank() != 2 && x.rank() != 4) || scale.rank() != 1 || scale.dim(0) != x.dim(1)) {
    throw ShapeError("scale_channels: scale " + shape_str(scale.shape()) +
                     " incompatible with " + shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  std::vector<T> out(x.values());
  const auto& sv = scale.values();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* o = out.data() + (b * c + ch) * plane;
      const T s = sv[static_cast<std::size_t>(ch)];
      for (std::int64_t p = 0; p < plane; ++p) o[p] *= s;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &scale},
                        [n, c, plane](TensorNode<T>& self) {
                          const auto& xv = self.parents[0]->data;
                          const auto& sv = self.parents[1]->data;
                          auto* tx = self.tracked_parent(0);
                          auto* ts = self.tracked_parent(1);
                          for (std::int64_t b = 0; b < n; ++b) {
                            for (std::int64_t ch = 0; ch < c; ++ch) {
                              const std::int64_t off = (b * c + ch) * plane;
                              const T* d = self.grad.data() + off;
                              if (tx != nullptr) {
                                T* dx = tx->ensure_grad().data() + off;
                                const T s = sv[static_cast<std::size_t>(ch)];
                                for (std::int64_t p = 0; p < plane; ++p) dx[p] += d[p] * s;
                              }
                              if (ts != nullptr) {
                                T acc = T(0);
                                for (std::int64_t p = 0; p < plane; ++p) acc += d[p] * xv[static_cast<std::size_t>(off + p)];
                                ts->ensure_grad()[static_cast<std::size_t>(ch)] += acc;
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  return make_result<T>({}, {acc}, {&x}, [](TensorNode<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::int64_t rows,
                            std::int64_t cols) {
  std::vector<T> out(logits.begin(), logits.end());
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) row[j] /= total;
  }
  return out;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                      std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K]");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  for (const int label : labels) {
    if (label < 0 || label >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) +
                       " out of range [0," + std::to_string(k) + ")");
    }
  }
  const auto& lv = logits.values();
  auto probs = std::make_shared<std::vector<T>>(softmax_rows<T>(lv, n, k));
  T loss = T(0);
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = lv.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T total = T(0);
    for (std::int64_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
    loss += (mx + std::log(total)) - row[labels[static_cast<std::size_t>(r)]];
  }
  loss /= static_cast<T>(n);
  std::vector<int> label_copy(labels.begin(), labels.end());
  CrossEntropy<T> result;
  result.probs = BasicTensor<T>({n, k}, *probs);
  result.loss = make_result<T>({}, {loss}, {&logits},
                               [n, k, probs, label_copy](TensorNode<T>& self) {
                                 auto& g = self.parents[0]->ensure_grad();
                                 const T scale = self.grad[0] / static_cast<T>(n);
                                 for (std::int64_t r = 0; r < n; ++r) {
                                   for (std::int64_t j = 0; j < k; ++j) {
                                     const std::size_t i = static_cast<std::size_t>(r * k + j);
                                     T d = (*probs)[i];
                                     if (j == label_copy[static_cast<std::size_t>(r)]) d -= T(1);
                                     g[i] += scale * d;
                                   }
                                 }
                               });
  return result;
}

namespace {

template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& x, std::shared_ptr<std::vector<T>> mask,
                          std::int64_t block) {
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= (*mask)[i / static_cast<std::size_t>(block)];
  }
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [mask, block](TensorNode<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            g[i] += self.grad[i] * (*mask)[i / static_cast<std::size_t>(block)];
                          }
                        });
}

void check_prob(double prob, const char* op) {
  if (!(prob >= 0.0 && prob < 1.0)) {
    throw ConfigError(std::string(op) + ": probability must lie in [0, 1)");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> drop_path(const BasicTensor<T>& x, double prob, Rng& rng, bool training) {
  check_prob(prob, "drop_path");
  if (!training || prob == 0.0) return x;
  const std::int64_t n = x.dim(0);
  const std::int64_t block = x.numel() / n;
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - prob));
  for (auto& m : *mask) m = rng.bernoulli(prob) ? T(0) : keep_scale;
  return apply_mask(x, std::move(mask), block);
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double prob, Rng& rng, bool training) {
  check_prob(prob, "dropout");
  if (!training || prob == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - prob));
  for (auto& m : *mask) m = rng.bernoulli(prob) ? T(0) : keep_scale;
  return apply_mask(x, std::move(mask), 1);
}

#define VIDCONV_INSTANTIATE_OPS(T)                                                       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                 const BasicTensor<T>&, const ConvSpec&);               \
  template BasicTensor<T> layer_norm_channels(const BasicTensor<T>&, const BasicTensor<T>&, \
                                              const BasicTensor<T>&, T);                \
  template BasicTensor<T> gelu(const BasicTensor<T>&, GeluMode);                         \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                        \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                 const BasicTensor<T>&);                                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> scale_channels(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                    \
  template std::vector<T> softmax_rows(std::span<const T>, std::int64_t, std::int64_t);  \
  template CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>); \
  template BasicTensor<T> drop_path(const BasicTensor<T>&, double, Rng&, bool);          \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Rng&, bool);

VIDCONV_INSTANTIATE_OPS(float)
VIDCONV_INSTANTIATE_OPS(double)

#undef VIDCONV_INSTANTIATE_OPS

}  // namespace vidconv

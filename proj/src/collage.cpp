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

#include "vidconv/collage.hpp"

#include <algorithm>
#include <numeric>

namespace vidconv {

CollageLayout::CollageLayout(GridSize grid) : grid_(grid) {
  if (grid.h <= 0 || grid.w <= 0) throw ShapeError("collage grid must be positive");
  frame_to_cell_.resize(static_cast<std::size_t>(grid.cells()));
  std::iota(frame_to_cell_.begin(), frame_to_cell_.end(), 0);
}

CollageLayout::CollageLayout(GridSize grid, std::vector<int> frame_to_cell)
    : grid_(grid), frame_to_cell_(std::move(frame_to_cell)) {
  if (grid.h <= 0 || grid.w <= 0) throw ShapeError("collage grid must be positive");
  std::vector<int> sorted(frame_to_cell_);
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expected(static_cast<std::size_t>(grid.cells()));
  std::iota(expected.begin(), expected.end(), 0);
  if (sorted != expected) {
    throw ShapeError("frame-to-cell map must be a bijection onto the grid cells");
  }
}

Extent2 CollageLayout::tile_of(std::int64_t height, std::int64_t width) const {
  if (height % grid_.h != 0 || width % grid_.w != 0) {
    throw ShapeError("feature map " + std::to_string(height) + "x" +
                     std::to_string(width) + " is not divisible by grid " +
                     std::to_string(grid_.h) + "x" + std::to_string(grid_.w));
  }
  return {height / grid_.h, width / grid_.w};
}

namespace {

// Copies (or accumulates) between frame-major and collage layouts.
// to_collage: frames -> collage; otherwise collage -> frames.
template <typename T, bool kAccumulate>
void move_tiles(const T* src, T* dst, std::int64_t clips, std::int64_t channels,
                Extent2 tile, const CollageLayout& layout, bool to_collage) {
  const GridSize g = layout.grid();
  const std::int64_t L = g.cells();
  const std::int64_t cw = g.w * tile.w;
  const std::int64_t tile_plane = tile.h * tile.w;
  const std::int64_t collage_plane = g.h * tile.h * cw;
  for (std::int64_t n = 0; n < clips; ++n) {
    for (std::int64_t t = 0; t < L; ++t) {
      const std::int64_t r0 = layout.row_of(static_cast<int>(t)) * tile.h;
      const std::int64_t c0 = layout.col_of(static_cast<int>(t)) * tile.w;
      for (std::int64_t ch = 0; ch < channels; ++ch) {
        const std::int64_t frame_off = ((n * L + t) * channels + ch) * tile_plane;
        const std::int64_t coll_off = (n * channels + ch) * collage_plane;
        for (std::int64_t y = 0; y < tile.h; ++y) {
          const std::int64_t f = frame_off + y * tile.w;
          const std::int64_t c = coll_off + (r0 + y) * cw + c0;
          const T* s = to_collage ? src + f : src + c;
          T* d = to_collage ? dst + c : dst + f;
          for (std::int64_t x = 0; x < tile.w; ++x) {
            if constexpr (kAccumulate) {
              d[x] += s[x];
            } else {
              d[x] = s[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> collage(const BasicTensor<T>& frames, const CollageLayout& layout) {
  if (frames.rank() != 4) throw ShapeError("collage: frames must be [L*N,C,H,W]");
  const GridSize g = layout.grid();
  const std::int64_t L = g.cells();
  if (frames.dim(0) % L != 0) {
    throw ShapeError("collage: batch " + std::to_string(frames.dim(0)) +
                     " is not a multiple of L=h*w=" + std::to_string(L));
  }
  const std::int64_t clips = frames.dim(0) / L, channels = frames.dim(1);
  const Extent2 tile{frames.dim(2), frames.dim(3)};
  std::vector<T> out(frames.values().size());
  move_tiles<T, false>(frames.values().data(), out.data(), clips, channels, tile, layout, true);
  return make_result<T>({clips, channels, g.h * tile.h, g.w * tile.w}, std::move(out),
                        {&frames}, [clips, channels, tile, layout](TensorNode<T>& self) {
                          auto& dx = self.parents[0]->ensure_grad();
                          move_tiles<T, true>(self.grad.data(), dx.data(), clips, channels,
                                              tile, layout, false);
                        });
}

template <typename T>
BasicTensor<T> uncollage(const BasicTensor<T>& x, const CollageLayout& layout) {
  if (x.rank() != 4) throw ShapeError("uncollage: input must be [N,C,hH,wW]");
  const GridSize g = layout.grid();
  const std::int64_t clips = x.dim(0), channels = x.dim(1);
  const Extent2 tile = layout.tile_of(x.dim(2), x.dim(3));
  std::vector<T> out(x.values().size());
  move_tiles<T, false>(x.values().data(), out.data(), clips, channels, tile, layout, false);
  return make_result<T>({clips * g.cells(), channels, tile.h, tile.w}, std::move(out), {&x},
                        [clips, channels, tile, layout](TensorNode<T>& self) {
                          auto& dx = self.parents[0]->ensure_grad();
                          move_tiles<T, true>(self.grad.data(), dx.data(), clips, channels,
                                              tile, layout, true);
                        });
}

template <typename T>
BasicTensor<T> tile_grid(const BasicTensor<T>& x, GridSize grid) {
  if (x.rank() != 4) throw ShapeError("tile_grid: input must be [N,C,H,W]");
  if (grid.h <= 0 || grid.w <= 0) throw ShapeError("tile_grid: grid must be positive");
  const std::int64_t rows = x.dim(0) * x.dim(1), th = x.dim(2), tw = x.dim(3);
  const std::int64_t oh = th * grid.h, ow = tw * grid.w;
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(rows * oh * ow));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * th * tw;
    T* dst = out.data() + r * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const T* srow = src + (y % th) * tw;
      T* drow = dst + y * ow;
      for (int k = 0; k < grid.w; ++k) std::copy(srow, srow + tw, drow + k * tw);
    }
  }
  return make_result<T>({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                        [rows, th, tw, oh, ow, grid](TensorNode<T>& self) {
                          auto& dx = self.parents[0]->ensure_grad();
                          for (std::int64_t r = 0; r < rows; ++r) {
                            T* d = dx.data() + r * th * tw;
                            const T* g = self.grad.data() + r * oh * ow;
                            for (std::int64_t y = 0; y < oh; ++y) {
                              T* drow = d + (y % th) * tw;
                              const T* grow = g + y * ow;
                              for (int k = 0; k < grid.w; ++k) {
                                for (std::int64_t x = 0; x < tw; ++x) drow[x] += grow[k * tw + x];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> temporal_dilated_conv(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                     const BasicTensor<T>& bias,
                                     const CollageLayout& layout) {
  if (x.rank() != 4) throw ShapeError("temporal_dilated_conv: input must be [N,C,hH,wW]");
  const GridSize g = layout.grid();
  const Extent2 tile = layout.tile_of(x.dim(2), x.dim(3));
  const std::int64_t channels = x.dim(1);
  if (weight.rank() != 4 || weight.dim(0) != channels || weight.dim(1) != 1 ||
      weight.dim(2) != g.h || weight.dim(3) != g.w) {
    throw ShapeError("temporal_dilated_conv: weight must be [" + std::to_string(channels) +
                     ",1," + std::to_string(g.h) + "," + std::to_string(g.w) + "], got " +
                     shape_str(weight.shape()));
  }
  ConvSpec spec = ConvSpec::depthwise(channels, {g.h, g.w}, {0, 0}, tile);
  return conv2d(x, weight, bias, spec);
}

#define VIDCONV_INSTANTIATE_COLLAGE(T)                                                    \
  template BasicTensor<T> collage(const BasicTensor<T>&, const CollageLayout&);           \
  template BasicTensor<T> uncollage(const BasicTensor<T>&, const CollageLayout&);         \
  template BasicTensor<T> tile_grid(const BasicTensor<T>&, GridSize);                     \
  template BasicTensor<T> temporal_dilated_conv(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                const BasicTensor<T>&, const CollageLayout&);

VIDCONV_INSTANTIATE_COLLAGE(float)
VIDCONV_INSTANTIATE_COLLAGE(double)

#undef VIDCONV_INSTANTIATE_COLLAGE

}  // namespace vidconv

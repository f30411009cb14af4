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

#ifndef VIDCONV_COLLAGE_HPP_
#define VIDCONV_COLLAGE_HPP_

#include <vector>

#include "vidconv/ops.hpp"
#include "vidconv/tensor.hpp"

namespace vidconv {

struct GridSize {
  int h = 3;
  int w = 3;
  int cells() const { return h * w; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

/// Placement of the L frames of a clip on an h x w grid. Frame t goes to
/// cell (t / w, t % w) unless a custom bijection is supplied.
class CollageLayout {
 public:
  CollageLayout() : CollageLayout(GridSize{1, 1}) {}
  explicit CollageLayout(GridSize grid);
  CollageLayout(GridSize grid, std::vector<int> frame_to_cell);

  GridSize grid() const { return grid_; }
  int frames() const { return grid_.cells(); }
  int cell_of(int frame) const { return frame_to_cell_[static_cast<std::size_t>(frame)]; }
  int row_of(int frame) const { return cell_of(frame) / grid_.w; }
  int col_of(int frame) const { return cell_of(frame) % grid_.w; }

  // Tile extent of a collage feature map; throws if not divisible.
  Extent2 tile_of(std::int64_t height, std::int64_t width) const;

 private:
  GridSize grid_;
  std::vector<int> frame_to_cell_;
};

// [L*N, C, Ht, Wt] (clip-major) -> [N, C, h*Ht, w*Wt]
template <typename T>
BasicTensor<T> collage(const BasicTensor<T>& frames, const CollageLayout& layout);

// [N, C, h*Ht, w*Wt] -> [L*N, C, Ht, Wt]
template <typename T>
BasicTensor<T> uncollage(const BasicTensor<T>& x, const CollageLayout& layout);

// Repeats [N, C, Ht, Wt] h times vertically and w times horizontally.
template <typename T>
BasicTensor<T> tile_grid(const BasicTensor<T>& x, GridSize grid);

/// Depth-wise conv with kernel (h, w), dilation equal to the current tile
/// size and no padding: output pixel (y, x) of channel c gathers the samples
/// at (y, x) of every frame's tile. weight: [C, 1, h, w].
template <typename T>
BasicTensor<T> temporal_dilated_conv(const BasicTensor<T>& x,
                                     const BasicTensor<T>& weight,
                                     const BasicTensor<T>& bias,
                                     const CollageLayout& layout);

}  // namespace vidconv

#endif  // VIDCONV_COLLAGE_HPP_

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

#ifndef VIDCONV_OPS_HPP_
#define VIDCONV_OPS_HPP_

#include <cstdint>
#include <span>

#include "vidconv/rng.hpp"
#include "vidconv/tensor.hpp"

namespace vidconv {

struct Extent2 {
  std::int64_t h = 1;
  std::int64_t w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Geometry of a 2D cross-correlation. The kernel extent must agree with the
/// weight tensor passed to conv2d.
struct ConvSpec {
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 dilation{1, 1};
  Extent2 padding{0, 0};
  std::int64_t groups = 1;

  static ConvSpec dense(Extent2 kernel, Extent2 stride = {1, 1},
                        Extent2 padding = {0, 0}, Extent2 dilation = {1, 1}) {
    return ConvSpec{kernel, stride, dilation, padding, 1};
  }
  static ConvSpec depthwise(std::int64_t channels, Extent2 kernel,
                            Extent2 padding = {0, 0},
                            Extent2 dilation = {1, 1}) {
    return ConvSpec{kernel, {1, 1}, dilation, padding, channels};
  }
};

// floor((in + 2p - d(k-1) - 1) / s) + 1; throws ShapeError if < 1.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t stride, std::int64_t dilation,
                                std::int64_t padding);
Extent2 conv_output_size(Extent2 in, const ConvSpec& spec);

enum class GeluMode { kTanh, kErf };

// x: [N, Cin, H, W], weight: [Cout, Cin/groups, kh, kw], bias: [Cout] or
// undefined. Cross-correlation, no kernel flip.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const ConvSpec& spec);

// Normalizes across the channel axis at every (n, y, x) position.
template <typename T>
BasicTensor<T> layer_norm_channels(const BasicTensor<T>& x,
                                   const BasicTensor<T>& gamma,
                                   const BasicTensor<T>& beta, T eps = T(1e-6));

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x, GeluMode mode = GeluMode::kTanh);

// [N, C, H, W] -> [N, C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// x: [N, K], weight: [O, K], bias: [O] or undefined.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Multiplies channel c of x ([N, C] or [N, C, H, W]) by scale[c].
template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x,
                              const BasicTensor<T>& scale);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
struct CrossEntropy {
  BasicTensor<T> loss;   // scalar, mean over the batch
  BasicTensor<T> probs;  // [N, K], not tracked
};

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                      std::span<const int> labels);

// Row-wise softmax of raw values, no tracking.
template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::int64_t rows,
                            std::int64_t cols);

// Stochastic depth: zeroes whole samples with probability `prob` and scales
// survivors by 1/(1 - prob). Identity when not training or prob == 0.
template <typename T>
BasicTensor<T> drop_path(const BasicTensor<T>& x, double prob, Rng& rng,
                         bool training);

// Element-wise inverted dropout.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double prob, Rng& rng,
                       bool training);

}  // namespace vidconv

#endif  // VIDCONV_OPS_HPP_

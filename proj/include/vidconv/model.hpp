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

#ifndef VIDCONV_MODEL_HPP_
#define VIDCONV_MODEL_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vidconv/collage.hpp"
#include "vidconv/ops.hpp"
#include "vidconv/rng.hpp"
#include "vidconv/tensor.hpp"

namespace vidconv {

enum class Variant { kTiny, kSmall, kBase, kCustom };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

inline constexpr int kNumStages = 4;

/// Architecture descriptor. `stacking_stage` names the stage whose output is
/// collaged: stages after it form the later-net and use VidConv blocks.
/// With `spatial_stacking` off every stage runs per frame; the temporal
/// branch (if enabled) still gathers across frames in the later-net.
struct ModelConfig {
  Variant variant = Variant::kTiny;
  std::array<int, kNumStages> channels{96, 192, 384, 768};
  std::array<int, kNumStages> blocks{3, 3, 9, 3};
  GridSize grid{3, 3};
  int frames = 9;
  int stacking_stage = 2;
  bool spatial_stacking = true;
  int head_width = 2304;
  int num_classes = 400;
  double drop_path_rate = 0.0;
  double head_dropout = 0.0;
  bool use_temporal_branch = true;
  bool use_neck = true;
  bool temporal_bias = true;
  Extent2 input_size{224, 224};
  double layer_scale_init = 1e-6;
  double alpha_init = 1e-2;
  double init_std = 0.02;
  GeluMode gelu = GeluMode::kTanh;

  static ModelConfig tiny();
  static ModelConfig small();
  static ModelConfig base();
  static ModelConfig for_variant(Variant v);
  // Reduced-width custom model for 64x64 desk-scale experiments.
  static ModelConfig toy(int num_classes = 2);

  // Stage index (0-based) is in the later-net.
  bool later_stage(int stage) const { return stage + 1 > stacking_stage; }
  bool has_temporal(int stage) const { return use_temporal_branch && later_stage(stage); }
  int total_blocks() const;
  // Linearly ramped stochastic-depth rate of the i-th block of the network.
  double block_drop_rate(int block_index) const;
  CollageLayout layout() const { return CollageLayout(grid); }

  void validate() const;
};

template <typename T>
struct BlockParams {
  BasicTensor<T> dw_weight, dw_bias;
  BasicTensor<T> temporal_weight, temporal_bias, alpha;  // undefined when no temporal branch
  BasicTensor<T> norm_weight, norm_bias;
  BasicTensor<T> pw1_weight, pw1_bias, pw2_weight, pw2_bias;
  BasicTensor<T> layer_scale;
};

enum class BlockLayout { kFrames, kCollage };

struct BlockContext {
  BlockLayout layout = BlockLayout::kCollage;
  CollageLayout grid;
  bool temporal = true;
  double drop_prob = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  GeluMode gelu = GeluMode::kTanh;
  Shape* temporal_shape = nullptr;  // receives the shape of T when set
};

/// ConvNeXt block with the optional temporal branch:
///   S = dw7x7(x); T = temporal_dilated_conv(x)
///   F = S + alpha * tile(T)
///   out = x + drop_path(layer_scale * pw2(gelu(pw1(norm(F)))))
/// In the frames layout S is computed per frame and T gathers across the
/// frames of each clip, then is broadcast back to every frame.
template <typename T>
BasicTensor<T> vidconv_block(const BasicTensor<T>& x, const BlockParams<T>& p,
                             const BlockContext& ctx);

// The pre-norm fusion F of a block, exposed for the fusion invariants.
template <typename T>
BasicTensor<T> fused_features(const BasicTensor<T>& x, const BlockParams<T>& p,
                              const BlockContext& ctx);

/// Dense conv of kernel (h, w) with dilation equal to the tile size and no
/// padding, then channel norm and GELU. [N, C4, hH2, wW2] -> [N, Cn, H2, W2].
template <typename T>
BasicTensor<T> neck_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                            const BasicTensor<T>& bias, const BasicTensor<T>& norm_weight,
                            const BasicTensor<T>& norm_bias, const CollageLayout& layout,
                            GeluMode gelu = GeluMode::kTanh);

enum class ParamGroup { kBackbone, kHead };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::kBackbone;
};

struct TraceEntry {
  std::string label;
  Shape shape;
};

/// Optional side channel of forward(): shapes of the main stage boundaries
/// and, when requested, the last-stage activation for CAM.
struct ForwardTrace {
  bool capture_last_stage = false;
  std::vector<TraceEntry> entries;
  Tensor last_stage;               // [N, C4, hH2, wW2] or [N*L, C4, H2, W2]
  bool last_stage_is_collage = false;

  const TraceEntry* find(const std::string& label) const;
};

class VidConvModel {
 public:
  VidConvModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter* find(const std::string& name) const;
  Tensor& param(const std::string& name);
  std::int64_t parameter_count() const;

  /// clip: [N*L, 3, H, W] in clip-major order. Returns logits [N, classes].
  /// `rng` drives drop path and dropout and is required when training.
  Tensor forward(const Tensor& clip, bool training, Rng* rng = nullptr,
                 ForwardTrace* trace = nullptr) const;

  BlockParams<float> block(int stage, int index) const;

 private:
  Tensor& add_param(const std::string& name, Shape shape, ParamGroup group);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

VidConvModel build_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace vidconv

#endif  // VIDCONV_MODEL_HPP_

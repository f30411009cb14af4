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

#ifndef VIDCONV_ANALYSIS_HPP_
#define VIDCONV_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vidconv/data.hpp"
#include "vidconv/model.hpp"
#include "vidconv/training.hpp"

namespace vidconv {

/// One row of a cost breakdown. `flops` counts multiply-accumulates of
/// convolutions and linear layers (one MAC = one FLOP). Norms, activations
/// and element-wise arithmetic go to `elementwise`, one op per output
/// element, and are left out of the headline total.
struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t elementwise = 0;
};

struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops = 0;  // per view
  std::int64_t elementwise = 0;
  int frames = 0;
  Extent2 input;
  std::vector<LayerCost> breakdown;
};

/// Analytic costs of `config` for one view of `frames` frames at `input`.
/// No model is instantiated. `frames` must equal the grid size whenever
/// the model gathers across frames.
CostReport count_flops(const ModelConfig& config, int frames, Extent2 input);
// Same report at the config's own frames and input size.
CostReport count_params(const ModelConfig& config);

std::string format_cost_table(const CostReport& report);
std::string cost_report_json(const CostReport& report);

struct OrderAccuracy {
  FrameOrder order = FrameOrder::kNormal;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct ShuffleReport {
  Task task = Task::kAppearanceOnly;
  std::uint64_t seed = 0;
  std::vector<OrderAccuracy> results;

  const OrderAccuracy* find(FrameOrder order) const;
};

/// Evaluates the model with the sampled frames of every clip put in each of
/// the requested orders. `options.order` and `options.seed` are overridden.
ShuffleReport shuffle_eval(const VidConvModel& model, const Dataset& dataset,
                           std::span<const FrameOrder> orders, std::uint64_t seed,
                           EvalOptions options);

/// Rectified gradient-weighted channel sum of one activation map.
/// activation and grad: [N, C, H, W]; returns [N, H, W] unnormalised.
/// Channel weights are gradients averaged over all N*H*W positions.
std::vector<float> grad_cam_map(const Tensor& activation, std::span<const float> grad);

// Rescales to [0, 1] by min-max; a constant map becomes all zeros.
void minmax_normalize(std::span<float> values);

struct CamResult {
  int frames = 0;
  std::int64_t height = 0, width = 0;  // per-frame map size
  std::vector<float> heatmaps;         // [frames, height, width] in [0, 1]
  std::vector<float> raw;              // same layout, before normalisation
};

/// Grad-CAM of `class_index` at the last-stage output. clip: [L, 3, H, W].
/// Collage maps are split back into per-frame tiles.
CamResult compute_cam(const VidConvModel& model, const Tensor& clip, int class_index);

// Weighted centre (x, y) of frame t of a CAM, in input pixels.
std::array<double, 2> cam_center(const CamResult& cam, int t, Extent2 input);

// Bilinear resize of one [h, w] map.
std::vector<float> resize_map(std::span<const float> map, std::int64_t h, std::int64_t w,
                              std::int64_t out_h, std::int64_t out_w);

// Binary greymap (P5) of values in [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const float> values,
               std::int64_t height, std::int64_t width);

struct LatencyReport {
  int views = 1;
  int timed_runs = 0;
  double mean_ms = 0.0;    // per forward of all views
  double median_ms = 0.0;
  double per_view_ms = 0.0;  // median / views
  std::string hardware;
  std::vector<double> samples_ms;
};

std::string hardware_descriptor();

/// Times forward passes in eval mode on one thread. The warm-up runs are
/// discarded.
LatencyReport benchmark_latency(const ModelConfig& config, int views, int warmup_runs,
                                int timed_runs);

enum class AblationSuite { kTemporalBranch, kGridResolution, kStackingStage };

std::string ablation_suite_name(AblationSuite suite);
AblationSuite parse_ablation_suite(const std::string& name);

struct AblationVariant {
  std::string label;
  ModelConfig model;
  int eval_clips = 1;
};

struct AblationRow {
  std::string label;
  double top1 = 0.0;
  double top5 = 0.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct AblationTable {
  AblationSuite suite = AblationSuite::kTemporalBranch;
  std::vector<AblationRow> rows;
};

/// Row variants of a suite derived from `base`.
///  temporal_branch: branch {none, yes} x stacking {none, grid}.
///  grid_resolution: none (9 frames), 2x2 (4 frames, 2 clips), 3x3, 4x4.
///  stacking_stage: stacking after stage 1..4, no neck.
/// Rows without spatial stacking also drop the neck.
std::vector<AblationVariant> ablation_variants(AblationSuite suite, const ModelConfig& base);

/// Trains and evaluates every row. Each row gets its own clip length.
AblationTable run_ablation(AblationSuite suite, const ModelConfig& base,
                           const Dataset& train_set, const Dataset& val_set,
                           const TrainConfig& train_config);

std::string format_ablation_table(const AblationTable& table);
std::vector<std::string> ablation_json_lines(const AblationTable& table);

}  // namespace vidconv

#endif  // VIDCONV_ANALYSIS_HPP_

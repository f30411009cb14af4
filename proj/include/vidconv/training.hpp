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

#ifndef VIDCONV_TRAINING_HPP_
#define VIDCONV_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidconv/data.hpp"
#include "vidconv/model.hpp"

namespace vidconv {

struct AdamWConfig {
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<std::vector<float>> m, v;  // one pair per parameter
  std::int64_t step = 0;
  AdamWConfig hp;
  std::map<ParamGroup, double> lr_multipliers{{ParamGroup::kBackbone, 1.0},
                                              {ParamGroup::kHead, 1.0}};
};

OptimState make_optim_state(const std::vector<Parameter>& params, AdamWConfig hp = {},
                            double backbone_lr_mult = 1.0);

/// One AdamW update with decoupled weight decay:
///   p <- p - lr_eff * wd * p - lr_eff * m_hat / (sqrt(v_hat) + eps)
/// where lr_eff = lr_now * multiplier of the parameter's group. Parameters
/// without a gradient are treated as having a zero gradient.
void adamw_step(std::vector<Parameter>& params, OptimState& state, double lr_now);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

/// Linear warm-up from 0 to lr_init over warmup_iters, then cosine decay
/// to lr_min at total_iters.
struct Schedule {
  std::int64_t warmup_iters = 0;
  std::int64_t total_iters = 1;
  double lr_init = 1e-3;
  double lr_min = 5e-6;
};

double lr_at(const Schedule& schedule, std::int64_t iter);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr_init = 1e-3;
  double lr_min = 5e-6;
  int warmup_epochs = 1;
  AdamWConfig adamw;
  double backbone_lr_mult = 1.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  ClipSampler sampler;  // training clips; evaluation centres the clip
  bool flip = true;
  std::vector<double> crop_scales{1.0, 0.875, 0.75};

  int eval_clips = 1;
  int eval_crops = 1;

  int checkpoint_every = 0;  // epochs; 0 keeps only best/last
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_path;
  bool resume = false;
  // Background threads preparing batches; 0 prepares them inline.
  int loader_threads = 0;
  bool verbose = false;
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double lr = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

std::string metrics_json_line(const EpochMetrics& m);

struct TrainHistory {
  std::vector<EpochMetrics> records;
  double best_val_top1 = -1.0;
  int best_epoch = -1;

  const EpochMetrics* last(const std::string& split) const;
};

// Called after each optimizer step with (step, loss).
using StepCallback = std::function<void(std::int64_t, double)>;

/// Trains in place. Deterministic in config.seed on a fixed build. With
/// `resume`, continues from the last checkpoint in checkpoint_dir.
/// A non-finite loss or gradient throws NumericalError after dumping the
/// state to checkpoint_dir/diverged when a directory is configured.
TrainHistory train(VidConvModel& model, const Dataset& train_set, const Dataset* val_set,
                   const TrainConfig& config, const StepCallback& on_step = {});

enum class FrameOrder { kNormal, kReverse, kRandom };

std::string frame_order_name(FrameOrder order);
FrameOrder parse_frame_order(const std::string& name);

struct EvalOptions {
  int num_clips = 1;
  int num_crops = 1;
  int frames_per_clip = 9;
  int stride = 2;
  Extent2 input_size{64, 64};
  FrameOrder order = FrameOrder::kNormal;
  std::uint64_t seed = 0;  // random clip starts and random frame order
  int batch_size = 16;
};

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double loss = 0.0;             // NLL of the averaged probabilities
  std::vector<float> probs;      // [videos, classes], view-averaged
  std::vector<int> labels;
};

// Fraction of rows whose label is among the k highest scores.
double topk_accuracy(std::span<const float> scores, std::span<const int> labels,
                     std::int64_t classes, int k);

/// Softmax scores averaged over num_clips x num_crops views per video.
/// One clip is centred; more clips start at seeded random offsets. One crop
/// is the full frame; more crops slide a window along the diagonal.
EvalResult evaluate_multiview(const VidConvModel& model, const Dataset& dataset,
                              const EvalOptions& options);

// Frame indices of view `clip` of video `video` before any reordering.
std::vector<int> eval_clip_indices(int num_frames, const EvalOptions& options,
                                   std::size_t video, int clip);
// Position t of the evaluated clip shows sampled frame perm[t].
std::vector<int> frame_permutation(int frames, FrameOrder order, std::uint64_t seed,
                                   std::size_t video, int clip);
std::vector<CropWindow> eval_crop_windows(Extent2 frame, int num_crops);

}  // namespace vidconv

#endif  // VIDCONV_TRAINING_HPP_

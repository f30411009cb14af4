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

#ifndef VIDCONV_DATA_HPP_
#define VIDCONV_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vidconv/ops.hpp"
#include "vidconv/rng.hpp"
#include "vidconv/tensor.hpp"

namespace vidconv {

enum class Task { kAppearanceOnly, kMotionDirection, kTemporalOrder };

std::string task_name(Task task);  // "appearance-only", ...
Task parse_task(const std::string& name);
int task_num_classes(Task task);
// Shortest video the task can be rendered into.
int task_min_frames(Task task);

struct SyntheticVideo {
  Tensor frames;  // [Nf, 3, H, W], values in [0, 1]
  int label = 0;
  Task task = Task::kAppearanceOnly;
  std::uint64_t seed = 0;
  // Ground-truth centre (x, y) of the tracked object per frame, in pixels.
  // NaN on frames where no object is drawn.
  std::vector<std::array<double, 2>> centers;
};

/// Renders one video. Deterministic in (task, label, size, frames, seed).
///  - AppearanceOnly: one of 2 shapes x 4 colours wandering randomly.
///  - MotionDirection: a shape moving at constant speed towards one of 8
///    compass directions, class 0 = east, counter-clockwise.
///  - TemporalOrder: a red and a blue disc flash in disjoint intervals;
///    label 0 when red comes first.
SyntheticVideo generate_video(Task task, int label, Extent2 size, int num_frames,
                              std::uint64_t seed);

/// Pure labelling rule that reads only pixels. frames: [Nf, 3, H, W].
int label_oracle(Task task, const Tensor& frames);

// Pixels whose channel spread exceeds this belong to a rendered object.
inline constexpr float kObjectSpread = 0.45f;

// Mean (x, y) of object pixels in frame t, or nullopt when none.
std::optional<std::array<double, 2>> object_centroid(const Tensor& frames, int t);

struct ClipSampler {
  int frames_per_clip = 9;
  int stride_min = 2;
  int stride_max = 2;
  std::optional<int> deterministic_stride;
  bool centered = false;  // centre the clip instead of a random start
};

// Stride the sampler will use on a video of `num_frames` frames; falls back
// to min(stride_min, (N - 1) / (L - 1)) when the drawn stride does not fit.
int resolve_stride(int num_frames, const ClipSampler& sampler, Rng& rng);

std::vector<int> clip_indices(int num_frames, const ClipSampler& sampler, Rng& rng);

// [L, 3, H, W] gathered at clip_indices.
Tensor sample_clip(const SyntheticVideo& video, const ClipSampler& sampler, Rng& rng);

// Gathers frames [indices] of a [Nf, C, H, W] tensor.
Tensor gather_frames(const Tensor& frames, std::span<const int> indices);

struct CropWindow {
  std::int64_t y = 0, x = 0, h = 0, w = 0;
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct AugmentParams {
  bool flip = false;
  CropWindow window;
};

AugmentParams draw_augment(Extent2 in, Rng& rng, bool enable_flip,
                           std::span<const double> crop_scales);

/// Crops `window` from every frame, resizes bilinearly to `out` and
/// mirrors left-right when `flip` is set.
Tensor apply_augment(const Tensor& clip, const AugmentParams& params, Extent2 out);

Tensor augment_clip(const Tensor& clip, Rng& rng, bool enable_flip,
                    std::span<const double> crop_scales, Extent2 out);

struct VideoRecord {
  std::uint64_t seed = 0;
  int label = 0;
  std::uint64_t checksum = 0;
};

/// A dataset is its manifest: videos are re-rendered from their seeds.
class Dataset {
 public:
  Dataset() = default;
  static Dataset generate(Task task, int num_videos, std::uint64_t seed,
                          Extent2 size = {64, 64}, int num_frames = 18,
                          int threads = 1);

  Task task() const { return task_; }
  int num_classes() const { return task_num_classes(task_); }
  Extent2 size() const { return size_; }
  int num_frames() const { return num_frames_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size_videos() const { return videos_.size(); }
  const std::vector<VideoRecord>& videos() const { return videos_; }

  SyntheticVideo video(std::size_t index) const;
  // Renders [begin, end) using `threads` workers; equal to serial output.
  std::vector<SyntheticVideo> render(std::size_t begin, std::size_t end,
                                     int threads = 1) const;

  // Index of the first video whose checksum disagrees, or nullopt.
  std::optional<std::size_t> verify(int threads = 1) const;

  void save(const std::filesystem::path& manifest) const;
  static Dataset load(const std::filesystem::path& manifest);

 private:
  Task task_ = Task::kTemporalOrder;
  Extent2 size_{64, 64};
  int num_frames_ = 18;
  std::uint64_t seed_ = 0;
  std::vector<VideoRecord> videos_;
};

std::uint64_t frames_checksum(const Tensor& frames);

}  // namespace vidconv

#endif  // VIDCONV_DATA_HPP_

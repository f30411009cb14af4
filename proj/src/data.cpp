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

#include "vidconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <thread>

#include <json.hpp>

namespace vidconv {

namespace {

using Color = std::array<float, 3>;

// Saturated palette; channel spread is at least 0.75 for every entry.
constexpr std::array<Color, 4> kPalette{{
    {0.95f, 0.10f, 0.10f},  // red
    {0.10f, 0.90f, 0.10f},  // green
    {0.10f, 0.15f, 0.95f},  // blue
    {0.95f, 0.90f, 0.10f},  // yellow
}};
constexpr int kRed = 0;
constexpr int kBlue = 2;

enum class Shape2D { kDisc, kSquare };

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Canvas {
  std::int64_t h, w;
  std::vector<float> background;  // [3, H, W]
};

Canvas make_background(Extent2 size, Rng& rng) {
  Canvas c{size.h, size.w, {}};
  c.background.resize(static_cast<std::size_t>(3 * size.h * size.w));
  const double base = rng.uniform(0.3, 0.7);
  for (float& v : c.background) v = static_cast<float>(base + rng.uniform(-0.1, 0.1));
  return c;
}

// Alpha-blends an anti-aliased shape centred at (cx, cy) into one frame.
void draw_shape(float* frame, std::int64_t h, std::int64_t w, Shape2D shape, double cx,
                double cy, double radius, const Color& color) {
  const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - radius - 2));
  const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(cy + radius + 2));
  const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - radius - 2));
  const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(cx + radius + 2));
  const std::int64_t plane = h * w;
  for (std::int64_t y = y0; y <= y1; ++y) {
    for (std::int64_t x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      double cover;
      if (shape == Shape2D::kDisc) {
        cover = std::clamp(radius + 0.5 - std::hypot(dx, dy), 0.0, 1.0);
      } else {
        cover = std::clamp(radius + 0.5 - std::abs(dx), 0.0, 1.0) *
                std::clamp(radius + 0.5 - std::abs(dy), 0.0, 1.0);
      }
      if (cover <= 0.0) continue;
      const auto a = static_cast<float>(cover);
      for (int ch = 0; ch < 3; ++ch) {
        float& px = frame[ch * plane + y * w + x];
        px = a * color[static_cast<std::size_t>(ch)] + (1.0f - a) * px;
      }
    }
  }
}

double size_scale(Extent2 size) {
  return static_cast<double>(std::min(size.h, size.w)) / 64.0;
}

struct Renderer {
  Extent2 size;
  int frames;
  Canvas canvas;
  std::vector<float> data;

  Renderer(Extent2 s, int n, Rng& rng)
      : size(s), frames(n), canvas(make_background(s, rng)) {
    const std::size_t per = canvas.background.size();
    data.resize(per * static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
      std::copy(canvas.background.begin(), canvas.background.end(),
                data.begin() + static_cast<std::ptrdiff_t>(per * t));
    }
  }

  float* frame(int t) { return data.data() + canvas.background.size() * static_cast<std::size_t>(t); }
};

void render_appearance(Renderer& r, int label, Rng& rng, std::vector<std::array<double, 2>>& centers) {
  const auto shape = label / 4 == 0 ? Shape2D::kDisc : Shape2D::kSquare;
  const Color& color = kPalette[static_cast<std::size_t>(label % 4)];
  const double k = size_scale(r.size);
  const double radius = rng.uniform(6.0, 10.0) * k;
  const double m = radius + 1.0;
  double cx = rng.uniform(m, r.size.w - m);
  double cy = rng.uniform(m, r.size.h - m);
  for (int t = 0; t < r.frames; ++t) {
    if (t > 0) {
      cx = std::clamp(cx + 1.5 * k * rng.normal(), m, r.size.w - m);
      cy = std::clamp(cy + 1.5 * k * rng.normal(), m, r.size.h - m);
    }
    draw_shape(r.frame(t), r.size.h, r.size.w, shape, cx, cy, radius, color);
    centers[static_cast<std::size_t>(t)] = {cx, cy};
  }
}

void render_motion(Renderer& r, int label, Rng& rng, std::vector<std::array<double, 2>>& centers) {
  const auto shape = rng.bernoulli(0.5) ? Shape2D::kDisc : Shape2D::kSquare;
  const Color& color = kPalette[rng.below(kPalette.size())];
  const double k = size_scale(r.size);
  const double radius = rng.uniform(5.0, 8.0) * k;
  const double m = radius + 1.0;
  const double angle = label * std::numbers::pi / 4.0;
  const double ux = std::cos(angle);
  const double uy = -std::sin(angle);  // image rows grow downwards
  const double steps = std::max(1, r.frames - 1);
  // Long videos slow down so the whole path stays inside the frame.
  const double max_speed = (static_cast<double>(std::min(r.size.w, r.size.h)) - 2.0 * m - 1.0) / steps;
  const double speed = std::min(rng.uniform(1.5, 2.5) * k, max_speed);
  const double dx = ux * speed * steps;
  const double dy = uy * speed * steps;
  const double cx0 = rng.uniform(m - std::min(0.0, dx), r.size.w - m - std::max(0.0, dx));
  const double cy0 = rng.uniform(m - std::min(0.0, dy), r.size.h - m - std::max(0.0, dy));
  for (int t = 0; t < r.frames; ++t) {
    const double cx = cx0 + ux * speed * t;
    const double cy = cy0 + uy * speed * t;
    draw_shape(r.frame(t), r.size.h, r.size.w, shape, cx, cy, radius, color);
    centers[static_cast<std::size_t>(t)] = {cx, cy};
  }
}

void render_temporal_order(Renderer& r, int label, Rng& rng,
                           std::vector<std::array<double, 2>>& centers) {
  // Events live in [1, Nf - 2] so the first and last frames stay empty.
  const int lo = 1;
  const int hi = r.frames - 2;
  const int max_len = std::min(5, (hi - lo + 1) / 2);
  const int min_len = std::min(3, max_len);
  const int len1 = static_cast<int>(rng.range(min_len, max_len));
  const int len2 = static_cast<int>(rng.range(min_len, max_len));
  std::vector<std::pair<int, int>> starts;
  for (int s1 = lo; s1 + len1 - 1 <= hi; ++s1) {
    for (int s2 = s1 + len1; s2 + len2 - 1 <= hi; ++s2) starts.emplace_back(s1, s2);
  }
  const auto [s1, s2] = starts[rng.below(starts.size())];
  const double k = size_scale(r.size);
  const int first = label == 0 ? kRed : kBlue;
  const int second = label == 0 ? kBlue : kRed;
  const std::array<std::tuple<int, int, int>, 2> events{
      {{s1, len1, first}, {s2, len2, second}}};
  for (const auto& [start, len, color] : events) {
    const double radius = rng.uniform(7.0, 10.0) * k;
    const double m = radius + 1.0;
    const double cx = rng.uniform(m, r.size.w - m);
    const double cy = rng.uniform(m, r.size.h - m);
    for (int t = start; t < start + len; ++t) {
      draw_shape(r.frame(t), r.size.h, r.size.w, Shape2D::kDisc, cx, cy, radius,
                 kPalette[static_cast<std::size_t>(color)]);
      centers[static_cast<std::size_t>(t)] = {cx, cy};
    }
  }
}

struct FrameObjects {
  std::int64_t count = 0;
  double sx = 0, sy = 0;
  double sr = 0, sg = 0, sb = 0;
  std::int64_t x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

FrameObjects scan_frame(const Tensor& frames, int t) {
  const std::int64_t h = frames.dim(2), w = frames.dim(3);
  const std::int64_t plane = h * w;
  const float* f = frames.values().data() + static_cast<std::int64_t>(t) * 3 * plane;
  FrameObjects o;
  o.x0 = w;
  o.y0 = h;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t i = y * w + x;
      const float r = f[i], g = f[plane + i], b = f[2 * plane + i];
      if (std::max({r, g, b}) - std::min({r, g, b}) <= kObjectSpread) continue;
      ++o.count;
      o.sx += x + 0.5;
      o.sy += y + 0.5;
      o.sr += r;
      o.sg += g;
      o.sb += b;
      o.x0 = std::min(o.x0, x);
      o.x1 = std::max(o.x1, x);
      o.y0 = std::min(o.y0, y);
      o.y1 = std::max(o.y1, y);
    }
  }
  return o;
}

int nearest_color(const FrameObjects& o) {
  const double n = static_cast<double>(o.count);
  const std::array<double, 3> mean{o.sr / n, o.sg / n, o.sb / n};
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < kPalette.size(); ++c) {
    double d = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) d += std::pow(mean[ch] - kPalette[c][ch], 2);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void check_frames(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("expected frames [N, 3, H, W], got " + shape_str(frames.shape()));
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw ConfigError("bad hex value in manifest: " + s);
  return v;
}

}  // namespace

std::string task_name(Task task) {
  switch (task) {
    case Task::kAppearanceOnly: return "appearance-only";
    case Task::kMotionDirection: return "motion-direction";
    case Task::kTemporalOrder: return "temporal-order";
  }
  throw ConfigError("unknown task");
}

Task parse_task(const std::string& name) {
  for (const Task t : {Task::kAppearanceOnly, Task::kMotionDirection, Task::kTemporalOrder}) {
    if (task_name(t) == name) return t;
  }
  throw ConfigError("unknown task '" + name +
                    "' (expected appearance-only, motion-direction or temporal-order)");
}

int task_num_classes(Task task) {
  switch (task) {
    case Task::kAppearanceOnly: return 8;
    case Task::kMotionDirection: return 8;
    case Task::kTemporalOrder: return 2;
  }
  return 0;
}

int task_min_frames(Task task) {
  switch (task) {
    case Task::kAppearanceOnly: return 1;
    case Task::kMotionDirection: return 2;
    case Task::kTemporalOrder: return 8;
  }
  return 0;
}

SyntheticVideo generate_video(Task task, int label, Extent2 size, int num_frames,
                              std::uint64_t seed) {
  if (size.h < 32 || size.w < 32 || size.h % 32 != 0 || size.w % 32 != 0) {
    throw ConfigError("frame size must be at least 32 and divisible by 32");
  }
  if (num_frames < task_min_frames(task)) {
    throw ConfigError(task_name(task) + " needs at least " +
                      std::to_string(task_min_frames(task)) + " frames");
  }
  if (label < 0 || label >= task_num_classes(task)) {
    throw ConfigError("label out of range for " + task_name(task));
  }
  Rng rng(seed);
  Renderer r(size, num_frames, rng);
  std::vector<std::array<double, 2>> centers(static_cast<std::size_t>(num_frames),
                                             {kNaN, kNaN});
  switch (task) {
    case Task::kAppearanceOnly: render_appearance(r, label, rng, centers); break;
    case Task::kMotionDirection: render_motion(r, label, rng, centers); break;
    case Task::kTemporalOrder: render_temporal_order(r, label, rng, centers); break;
  }
  SyntheticVideo v;
  v.frames = Tensor({num_frames, 3, size.h, size.w}, std::move(r.data));
  v.label = label;
  v.task = task;
  v.seed = seed;
  v.centers = std::move(centers);
  return v;
}

std::optional<std::array<double, 2>> object_centroid(const Tensor& frames, int t) {
  check_frames(frames);
  const FrameObjects o = scan_frame(frames, t);
  if (o.count == 0) return std::nullopt;
  const double n = static_cast<double>(o.count);
  return std::array<double, 2>{o.sx / n, o.sy / n};
}

int label_oracle(Task task, const Tensor& frames) {
  check_frames(frames);
  const int n = static_cast<int>(frames.dim(0));
  constexpr std::int64_t kMinPixels = 3;
  switch (task) {
    case Task::kAppearanceOnly: {
      std::array<int, 8> votes{};
      for (int t = 0; t < n; ++t) {
        const FrameObjects o = scan_frame(frames, t);
        if (o.count < kMinPixels) continue;
        const double box = static_cast<double>((o.x1 - o.x0 + 1) * (o.y1 - o.y0 + 1));
        const bool square = static_cast<double>(o.count) / box > 0.88;
        ++votes[static_cast<std::size_t>((square ? 4 : 0) + nearest_color(o))];
      }
      const auto it = std::max_element(votes.begin(), votes.end());
      return *it == 0 ? -1 : static_cast<int>(it - votes.begin());
    }
    case Task::kMotionDirection: {
      std::optional<std::array<double, 2>> first, last;
      for (int t = 0; t < n; ++t) {
        const auto c = object_centroid(frames, t);
        if (!c) continue;
        if (!first) first = c;
        last = c;
      }
      if (!first) return -1;
      const double dx = (*last)[0] - (*first)[0];
      const double dy = (*first)[1] - (*last)[1];
      if (std::hypot(dx, dy) < 1e-9) return -1;
      const double sector = std::atan2(dy, dx) / (std::numbers::pi / 4.0);
      const int d = static_cast<int>(std::lround(sector));
      return ((d % 8) + 8) % 8;
    }
    case Task::kTemporalOrder: {
      int red = -1, blue = -1;
      for (int t = 0; t < n; ++t) {
        const FrameObjects o = scan_frame(frames, t);
        if (o.count < kMinPixels) continue;
        const int c = nearest_color(o);
        if (c == kRed && red < 0) red = t;
        if (c == kBlue && blue < 0) blue = t;
      }
      if (red < 0 || blue < 0) return -1;
      return red < blue ? 0 : 1;
    }
  }
  return -1;
}

int resolve_stride(int num_frames, const ClipSampler& s, Rng& rng) {
  const int l = s.frames_per_clip;
  if (l < 1) throw ConfigError("frames_per_clip must be positive");
  if (num_frames < l) {
    throw ConfigError("video has " + std::to_string(num_frames) + " frames, clip needs " +
                      std::to_string(l));
  }
  if (l == 1) return 1;
  int stride;
  if (s.deterministic_stride) {
    stride = *s.deterministic_stride;
  } else {
    if (s.stride_min < 1 || s.stride_max < s.stride_min) {
      throw ConfigError("stride range must satisfy 1 <= min <= max");
    }
    stride = static_cast<int>(rng.range(s.stride_min, s.stride_max));
  }
  if (stride < 1) throw ConfigError("stride must be positive");
  if ((l - 1) * stride + 1 > num_frames) {
    stride = std::min(s.stride_min, (num_frames - 1) / (l - 1));
  }
  return stride;
}

std::vector<int> clip_indices(int num_frames, const ClipSampler& s, Rng& rng) {
  const int stride = resolve_stride(num_frames, s, rng);
  const int l = s.frames_per_clip;
  const int slack = num_frames - ((l - 1) * stride + 1);
  const int start = s.centered ? slack / 2 : static_cast<int>(rng.range(0, slack));
  std::vector<int> idx(static_cast<std::size_t>(l));
  for (int i = 0; i < l; ++i) idx[static_cast<std::size_t>(i)] = start + i * stride;
  return idx;
}

Tensor gather_frames(const Tensor& frames, std::span<const int> indices) {
  if (frames.rank() != 4) throw ShapeError("gather_frames expects [N, C, H, W]");
  const std::int64_t per = frames.dim(1) * frames.dim(2) * frames.dim(3);
  std::vector<float> out(static_cast<std::size_t>(per * std::ssize(indices)));
  const auto& src = frames.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= frames.dim(0)) {
      throw ShapeError("frame index " + std::to_string(indices[i]) + " out of range");
    }
    std::copy_n(src.begin() + indices[i] * per, per,
                out.begin() + static_cast<std::ptrdiff_t>(i) * per);
  }
  Shape shape = frames.shape();
  shape[0] = std::ssize(indices);
  return Tensor(std::move(shape), std::move(out));
}

Tensor sample_clip(const SyntheticVideo& video, const ClipSampler& sampler, Rng& rng) {
  const auto idx = clip_indices(static_cast<int>(video.frames.dim(0)), sampler, rng);
  return gather_frames(video.frames, idx);
}

AugmentParams draw_augment(Extent2 in, Rng& rng, bool enable_flip,
                           std::span<const double> crop_scales) {
  AugmentParams p;
  double scale = 1.0;
  if (!crop_scales.empty()) {
    for (const double s : crop_scales) {
      if (!(s > 0.0 && s <= 1.0)) throw ConfigError("crop scales must lie in (0, 1]");
    }
    scale = crop_scales[rng.below(crop_scales.size())];
  }
  p.window.h = std::max<std::int64_t>(1, std::llround(scale * static_cast<double>(in.h)));
  p.window.w = std::max<std::int64_t>(1, std::llround(scale * static_cast<double>(in.w)));
  p.window.y = rng.range(0, in.h - p.window.h);
  p.window.x = rng.range(0, in.w - p.window.w);
  p.flip = enable_flip && rng.bernoulli(0.5);
  return p;
}

Tensor apply_augment(const Tensor& clip, const AugmentParams& p, Extent2 out) {
  if (clip.rank() != 4) throw ShapeError("augment expects [L, C, H, W]");
  const std::int64_t n = clip.dim(0) * clip.dim(1);
  const std::int64_t h = clip.dim(2), w = clip.dim(3);
  const CropWindow& win = p.window;
  if (win.y < 0 || win.x < 0 || win.h < 1 || win.w < 1 || win.y + win.h > h ||
      win.x + win.w > w) {
    throw ShapeError("crop window outside the frame");
  }
  // Bilinear sampling with half-pixel centres, clamped to the window.
  struct Tap {
    std::int64_t i0, i1;
    float f;
  };
  auto taps = [](std::int64_t origin, std::int64_t extent, std::int64_t size) {
    std::vector<Tap> t(static_cast<std::size_t>(size));
    const double scale = static_cast<double>(extent) / static_cast<double>(size);
    for (std::int64_t i = 0; i < size; ++i) {
      const double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(extent - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(s));
      const std::int64_t i1 = std::min(i0 + 1, extent - 1);
      t[static_cast<std::size_t>(i)] = {origin + i0, origin + i1, static_cast<float>(s - i0)};
    }
    return t;
  };
  const auto ty = taps(win.y, win.h, out.h);
  auto tx = taps(win.x, win.w, out.w);
  if (p.flip) std::reverse(tx.begin(), tx.end());
  std::vector<float> dst(static_cast<std::size_t>(n * out.h * out.w));
  const auto& src = clip.values();
  for (std::int64_t c = 0; c < n; ++c) {
    const float* plane = src.data() + c * h * w;
    float* o = dst.data() + c * out.h * out.w;
    for (std::int64_t y = 0; y < out.h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const float* r0 = plane + a.i0 * w;
      const float* r1 = plane + a.i1 * w;
      for (std::int64_t x = 0; x < out.w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const float top = r0[b.i0] + b.f * (r0[b.i1] - r0[b.i0]);
        const float bot = r1[b.i0] + b.f * (r1[b.i1] - r1[b.i0]);
        o[y * out.w + x] = top + a.f * (bot - top);
      }
    }
  }
  return Tensor({clip.dim(0), clip.dim(1), out.h, out.w}, std::move(dst));
}

Tensor augment_clip(const Tensor& clip, Rng& rng, bool enable_flip,
                    std::span<const double> crop_scales, Extent2 out) {
  const AugmentParams p = draw_augment({clip.dim(2), clip.dim(3)}, rng, enable_flip, crop_scales);
  return apply_augment(clip, p, out);
}

std::uint64_t frames_checksum(const Tensor& frames) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const float v : frames.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                 static_cast<unsigned char>(bits >> 16),
                                 static_cast<unsigned char>(bits >> 24)};
    h = fnv1a64(le, 4, h);
  }
  return h;
}

Dataset Dataset::generate(Task task, int num_videos, std::uint64_t seed, Extent2 size,
                          int num_frames, int threads) {
  if (num_videos < 1) throw ConfigError("a dataset needs at least one video");
  Dataset d;
  d.task_ = task;
  d.size_ = size;
  d.num_frames_ = num_frames;
  d.seed_ = seed;
  const int k = task_num_classes(task);
  std::vector<int> labels(static_cast<std::size_t>(num_videos));
  for (int i = 0; i < num_videos; ++i) labels[static_cast<std::size_t>(i)] = i % k;
  Rng rng(derive_seed(seed, "labels"));
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::swap(labels[i - 1], labels[rng.below(i)]);
  }
  d.videos_.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    d.videos_[i].seed = derive_seed(seed, "video", i);
    d.videos_[i].label = labels[i];
  }
  const auto rendered = d.render(0, d.videos_.size(), threads);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    d.videos_[i].checksum = frames_checksum(rendered[i].frames);
  }
  return d;
}

SyntheticVideo Dataset::video(std::size_t index) const {
  const VideoRecord& r = videos_.at(index);
  return generate_video(task_, r.label, size_, num_frames_, r.seed);
}

std::vector<SyntheticVideo> Dataset::render(std::size_t begin, std::size_t end,
                                            int threads) const {
  end = std::min(end, videos_.size());
  std::vector<SyntheticVideo> out(end > begin ? end - begin : 0);
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(out.size())));
  auto work = [&](int id) {
    for (std::size_t i = static_cast<std::size_t>(id); i < out.size();
         i += static_cast<std::size_t>(workers)) {
      out[i] = video(begin + i);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int id = 0; id < workers; ++id) pool.emplace_back(work, id);
  }
  return out;
}

std::optional<std::size_t> Dataset::verify(int threads) const {
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < videos_.size(); b += kChunk) {
    const auto vids = render(b, b + kChunk, threads);
    for (std::size_t i = 0; i < vids.size(); ++i) {
      if (frames_checksum(vids[i].frames) != videos_[b + i].checksum) return b + i;
    }
  }
  return std::nullopt;
}

void Dataset::save(const std::filesystem::path& manifest) const {
  nlohmann::json j;
  j["format"] = "vidconv-dataset";
  j["version"] = 1;
  j["task"] = task_name(task_);
  j["num_classes"] = num_classes();
  j["height"] = size_.h;
  j["width"] = size_.w;
  j["num_frames"] = num_frames_;
  j["seed"] = hex64(seed_);
  std::vector<int> counts(static_cast<std::size_t>(num_classes()), 0);
  auto& list = j["videos"] = nlohmann::json::array();
  for (const VideoRecord& r : videos_) {
    ++counts[static_cast<std::size_t>(r.label)];
    list.push_back({{"seed", hex64(r.seed)}, {"label", r.label}, {"checksum", hex64(r.checksum)}});
  }
  j["class_counts"] = counts;
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream f(manifest);
  if (!f) throw ConfigError("cannot write " + manifest.string());
  f << j.dump(1) << '\n';
}

Dataset Dataset::load(const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw ConfigError("cannot read dataset manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
    if (j.at("format") != "vidconv-dataset") throw ConfigError("not a dataset manifest");
    Dataset d;
    d.task_ = parse_task(j.at("task").get<std::string>());
    d.size_ = {j.at("height").get<std::int64_t>(), j.at("width").get<std::int64_t>()};
    d.num_frames_ = j.at("num_frames").get<int>();
    d.seed_ = parse_hex64(j.at("seed").get<std::string>());
    for (const auto& v : j.at("videos")) {
      VideoRecord r;
      r.seed = parse_hex64(v.at("seed").get<std::string>());
      r.label = v.at("label").get<int>();
      r.checksum = parse_hex64(v.at("checksum").get<std::string>());
      if (r.label < 0 || r.label >= d.num_classes()) throw ConfigError("label out of range");
      d.videos_.push_back(r);
    }
    if (d.videos_.empty()) throw ConfigError("manifest lists no videos");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed dataset manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace vidconv

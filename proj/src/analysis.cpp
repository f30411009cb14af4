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

#include "vidconv/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace vidconv {

namespace {

class CostBuilder {
 public:
  void add(std::string name, std::int64_t params, std::int64_t flops, std::int64_t elementwise) {
    report_.breakdown.push_back({std::move(name), params, flops, elementwise});
    report_.params += params;
    report_.flops += flops;
    report_.elementwise += elementwise;
  }
  CostReport take() { return std::move(report_); }

 private:
  CostReport report_;
};

// Current activation geometry: `images` maps of c x h x w.
struct Geometry {
  std::int64_t images, c, h, w;
  std::int64_t elements() const { return images * c * h * w; }
  std::int64_t positions() const { return images * h * w; }
};

}  // namespace

CostReport count_flops(const ModelConfig& config, int frames, Extent2 input) {
  ModelConfig cfg = config;
  cfg.frames = frames;
  cfg.input_size = input;
  cfg.validate();
  const auto& ch = cfg.channels;
  const GridSize g = cfg.grid;
  const std::int64_t taps = g.cells();
  CostBuilder b;

  Geometry x{frames, ch[0], conv_output_extent(input.h, 4, 4, 1, 0),
             conv_output_extent(input.w, 4, 4, 1, 0)};
  b.add("stem.conv", 3 * ch[0] * 16 + ch[0], x.elements() * 3 * 16, 0);
  b.add("stem.norm", 2 * ch[0], 0, x.elements());

  bool collaged = false;
  auto to_collage = [&] {
    x = {x.images / frames, x.c, x.h * g.h, x.w * g.w};
    collaged = true;
  };
  // Tile extent of the current map, per frame.
  auto tile = [&]() -> Extent2 {
    return collaged ? Extent2{x.h / g.h, x.w / g.w} : Extent2{x.h, x.w};
  };

  for (int s = 0; s < kNumStages; ++s) {
    const std::int64_t c = ch[s];
    const std::string stage = "stages." + std::to_string(s) + ".";
    if (s > 0) {
      b.add(stage + "downsample.norm", 2 * x.c, 0, x.elements());
      const std::int64_t cin = x.c;
      x = {x.images, c, conv_output_extent(x.h, 2, 2, 1, 0), conv_output_extent(x.w, 2, 2, 1, 0)};
      b.add(stage + "downsample.conv", cin * c * 4 + c, x.elements() * cin * 4, 0);
    }
    for (int i = 0; i < cfg.blocks[s]; ++i) {
      const std::string pre = stage + "blocks." + std::to_string(i) + ".";
      const std::int64_t n = x.elements();
      b.add(pre + "dwconv", 49 * c + c, n * 49, 0);
      if (cfg.has_temporal(s)) {
        const Extent2 t = tile();
        const std::int64_t clips = collaged ? x.images : x.images / frames;
        const std::int64_t out = clips * c * t.h * t.w;
        b.add(pre + "temporal", c * taps + (cfg.temporal_bias ? c : 0), out * taps, 0);
        // alpha scaling of T plus the fusion add over the full map
        b.add(pre + "alpha", c, 0, out + n);
      }
      b.add(pre + "norm", 2 * c, 0, n);
      b.add(pre + "pwconv1", c * 4 * c + 4 * c, n * 4 * c, 4 * n);  // + GELU
      b.add(pre + "pwconv2", 4 * c * c + c, n * 4 * c, 0);
      b.add(pre + "layer_scale", c, 0, 2 * n);  // scale + residual add
    }
    if (cfg.spatial_stacking && s + 1 == cfg.stacking_stage) to_collage();
  }

  std::int64_t features = x.c;
  if (cfg.use_neck) {
    if (!collaged) to_collage();
    const Extent2 t = tile();
    const std::int64_t hw = cfg.head_width;
    const std::int64_t cin = x.c;
    x = {x.images, hw, t.h, t.w};
    b.add("neck.conv", hw * cin * taps + hw, x.elements() * cin * taps, 0);
    b.add("neck.norm", 2 * hw, 0, 2 * x.elements() + x.elements());  // norm, GELU, pool
    features = hw;
  } else {
    const std::int64_t clips = collaged ? x.images : x.images / frames;
    b.add("norm", 2 * x.c, 0, x.elements() + clips * x.c);  // pool + norm
  }
  const std::int64_t k = cfg.num_classes;
  b.add("head", features * k + k, features * k, 0);

  CostReport r = b.take();
  r.frames = frames;
  r.input = input;
  return r;
}

CostReport count_params(const ModelConfig& config) {
  return count_flops(config, config.frames, config.input_size);
}

std::string format_cost_table(const CostReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "# %d frames, %lldx%lld; flops = multiply-accumulates per view\n",
                r.frames, static_cast<long long>(r.input.h), static_cast<long long>(r.input.w));
  os << line;
  std::snprintf(line, sizeof(line), "%-36s %14s %16s %16s\n", "layer", "params", "flops", "elementwise");
  os << line;
  for (const LayerCost& l : r.breakdown) {
    std::snprintf(line, sizeof(line), "%-36s %14lld %16lld %16lld\n", l.name.c_str(),
                  static_cast<long long>(l.params), static_cast<long long>(l.flops),
                  static_cast<long long>(l.elementwise));
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-36s %14lld %16lld %16lld\n", "total",
                static_cast<long long>(r.params), static_cast<long long>(r.flops),
                static_cast<long long>(r.elementwise));
  os << line;
  std::snprintf(line, sizeof(line), "params %.3f M, flops %.3f G per view\n",
                static_cast<double>(r.params) / 1e6, static_cast<double>(r.flops) / 1e9);
  os << line;
  return os.str();
}

std::string cost_report_json(const CostReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerCost& l : r.breakdown) {
    layers.push_back({{"name", l.name}, {"params", l.params}, {"flops", l.flops},
                      {"elementwise", l.elementwise}});
  }
  return nlohmann::json{{"params", r.params},
                        {"flops_per_view", r.flops},
                        {"elementwise", r.elementwise},
                        {"frames", r.frames},
                        {"input", {r.input.h, r.input.w}},
                        {"convention", "one multiply-accumulate = one flop"},
                        {"breakdown", layers}}
      .dump();
}

const OrderAccuracy* ShuffleReport::find(FrameOrder order) const {
  for (const OrderAccuracy& r : results) {
    if (r.order == order) return &r;
  }
  return nullptr;
}

ShuffleReport shuffle_eval(const VidConvModel& model, const Dataset& dataset,
                           std::span<const FrameOrder> orders, std::uint64_t seed,
                           EvalOptions options) {
  ShuffleReport report;
  report.task = dataset.task();
  report.seed = seed;
  options.seed = seed;
  for (const FrameOrder order : orders) {
    options.order = order;
    const EvalResult r = evaluate_multiview(model, dataset, options);
    report.results.push_back({order, r.top1, r.top5});
  }
  return report;
}

std::vector<float> grad_cam_map(const Tensor& activation, std::span<const float> grad) {
  if (activation.rank() != 4 || std::ssize(grad) != activation.numel()) {
    throw ShapeError("grad_cam_map expects activation and gradient of equal [N, C, H, W] shape");
  }
  const std::int64_t n = activation.dim(0), c = activation.dim(1);
  const std::int64_t plane = activation.dim(2) * activation.dim(3);
  std::vector<double> weight(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = 0; k < c; ++k) {
      const float* gp = grad.data() + (i * c + k) * plane;
      for (std::int64_t p = 0; p < plane; ++p) weight[static_cast<std::size_t>(k)] += gp[p];
    }
  }
  for (double& w : weight) w /= static_cast<double>(n * plane);
  std::vector<float> map(static_cast<std::size_t>(n * plane), 0.0f);
  const auto& a = activation.values();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        acc += weight[static_cast<std::size_t>(k)] * a[static_cast<std::size_t>((i * c + k) * plane + p)];
      }
      map[static_cast<std::size_t>(i * plane + p)] = static_cast<float>(std::max(0.0, acc));
    }
  }
  return map;
}

void minmax_normalize(std::span<float> values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(values.begin(), values.end(), 0.0f);
    return;
  }
  for (float& v : values) v = (v - mn) / (mx - mn);
}

CamResult compute_cam(const VidConvModel& model, const Tensor& clip, int class_index) {
  const ModelConfig& cfg = model.config();
  if (class_index < 0 || class_index >= cfg.num_classes) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range");
  }
  if (clip.rank() != 4 || clip.dim(0) != cfg.frames) {
    throw ShapeError("compute_cam expects one clip [L, 3, H, W], got " + shape_str(clip.shape()));
  }
  ForwardTrace trace;
  trace.capture_last_stage = true;
  const Tensor logits = model.forward(clip, false, nullptr, &trace);
  std::vector<float> onehot(static_cast<std::size_t>(cfg.num_classes), 0.0f);
  onehot[static_cast<std::size_t>(class_index)] = 1.0f;
  Tensor score = sum(mul(logits, Tensor({1, cfg.num_classes}, onehot)));
  score.backward();
  for (const Parameter& p : model.parameters()) {
    Tensor shared = p.value;
    shared.zero_grad();
  }
  const Tensor& act = trace.last_stage;
  std::vector<float> grad(static_cast<std::size_t>(act.numel()), 0.0f);
  if (act.has_grad()) std::copy(act.grad().begin(), act.grad().end(), grad.begin());
  const std::vector<float> map = grad_cam_map(act, grad);

  CamResult cam;
  cam.frames = cfg.frames;
  if (trace.last_stage_is_collage) {
    const CollageLayout layout = cfg.layout();
    const Extent2 t = layout.tile_of(act.dim(2), act.dim(3));
    cam.height = t.h;
    cam.width = t.w;
    const std::int64_t wide = act.dim(3);
    cam.raw.resize(static_cast<std::size_t>(cfg.frames * t.h * t.w));
    for (int f = 0; f < cfg.frames; ++f) {
      const std::int64_t oy = layout.row_of(f) * t.h, ox = layout.col_of(f) * t.w;
      for (std::int64_t y = 0; y < t.h; ++y) {
        for (std::int64_t x = 0; x < t.w; ++x) {
          cam.raw[static_cast<std::size_t>((f * t.h + y) * t.w + x)] =
              map[static_cast<std::size_t>((oy + y) * wide + ox + x)];
        }
      }
    }
  } else {
    cam.height = act.dim(2);
    cam.width = act.dim(3);
    cam.raw = map;
  }
  cam.heatmaps = cam.raw;
  minmax_normalize(cam.heatmaps);
  return cam;
}

std::array<double, 2> cam_center(const CamResult& cam, int t, Extent2 input) {
  const float* m = cam.heatmaps.data() + static_cast<std::int64_t>(t) * cam.height * cam.width;
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::int64_t y = 0; y < cam.height; ++y) {
    for (std::int64_t x = 0; x < cam.width; ++x) {
      const double v = m[y * cam.width + x];
      total += v;
      sx += v * (x + 0.5);
      sy += v * (y + 0.5);
    }
  }
  const double kx = static_cast<double>(input.w) / static_cast<double>(cam.width);
  const double ky = static_cast<double>(input.h) / static_cast<double>(cam.height);
  if (total <= 0.0) return {input.w / 2.0, input.h / 2.0};
  return {sx / total * kx, sy / total * ky};
}

std::vector<float> resize_map(std::span<const float> map, std::int64_t h, std::int64_t w,
                              std::int64_t out_h, std::int64_t out_w) {
  const Tensor t({1, 1, h, w}, std::vector<float>(map.begin(), map.end()));
  const Tensor r = apply_augment(t, {false, {0, 0, h, w}}, {out_h, out_w});
  return r.values();
}

void write_pgm(const std::filesystem::path& path, std::span<const float> values,
               std::int64_t height, std::int64_t width) {
  if (std::ssize(values) != height * width) throw ShapeError("write_pgm: size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "P5\n" << width << ' ' << height << "\n255\n";
  for (const float v : values) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    f.put(static_cast<char>(byte));
  }
}

std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads, single-threaded run";
}

LatencyReport benchmark_latency(const ModelConfig& config, int views, int warmup_runs,
                                int timed_runs) {
  if (timed_runs < 3) throw ConfigError("latency needs at least 3 timed runs");
  if (views < 1 || warmup_runs < 0) throw ConfigError("views must be positive");
  const VidConvModel model(config, 0);
  Rng rng(derive_seed(0, "latency"));
  const Shape shape{static_cast<std::int64_t>(views) * config.frames, 3, config.input_size.h,
                    config.input_size.w};
  std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
  for (float& v : data) v = static_cast<float>(rng.uniform());
  const Tensor input(shape, std::move(data));
  NoGradGuard no_grad;
  for (int i = 0; i < warmup_runs; ++i) model.forward(input, false);
  LatencyReport r;
  r.views = views;
  r.timed_runs = timed_runs;
  r.hardware = hardware_descriptor();
  for (int i = 0; i < timed_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(input, false);
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = r.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  double total = 0.0;
  for (const double v : sorted) total += v;
  r.mean_ms = total / static_cast<double>(sorted.size());
  r.per_view_ms = r.median_ms / views;
  return r;
}

std::string ablation_suite_name(AblationSuite suite) {
  switch (suite) {
    case AblationSuite::kTemporalBranch: return "temporal_branch";
    case AblationSuite::kGridResolution: return "grid_resolution";
    case AblationSuite::kStackingStage: return "stacking_stage";
  }
  return "temporal_branch";
}

AblationSuite parse_ablation_suite(const std::string& name) {
  for (const AblationSuite s : {AblationSuite::kTemporalBranch, AblationSuite::kGridResolution,
                                AblationSuite::kStackingStage}) {
    if (ablation_suite_name(s) == name) return s;
  }
  throw ConfigError("unknown ablation suite '" + name +
                    "' (expected temporal_branch, grid_resolution or stacking_stage)");
}

std::vector<AblationVariant> ablation_variants(AblationSuite suite, const ModelConfig& base) {
  auto with = [&](std::string label, bool temporal, bool stacking, GridSize grid, int clips = 1) {
    ModelConfig m = base;
    m.use_temporal_branch = temporal;
    m.spatial_stacking = stacking;
    m.use_neck = base.use_neck && stacking;
    m.grid = grid;
    m.frames = grid.cells();
    return AblationVariant{std::move(label), m, clips};
  };
  const GridSize g = base.grid;
  const std::string gs = std::to_string(g.h) + "x" + std::to_string(g.w);
  std::vector<AblationVariant> rows;
  switch (suite) {
    case AblationSuite::kTemporalBranch:
      rows.push_back(with("branch none / stacking none", false, false, g));
      rows.push_back(with("branch none / stacking " + gs, false, true, g));
      rows.push_back(with("branch yes / stacking none", true, false, g));
      rows.push_back(with("branch yes / stacking " + gs, true, true, g));
      break;
    case AblationSuite::kGridResolution:
      rows.push_back(with("none", false, false, {3, 3}));
      rows.push_back(with("2x2", base.use_temporal_branch, true, {2, 2}, 2));
      rows.push_back(with("3x3", base.use_temporal_branch, true, {3, 3}));
      rows.push_back(with("4x4", base.use_temporal_branch, true, {4, 4}));
      break;
    case AblationSuite::kStackingStage:
      for (int s = 1; s <= kNumStages; ++s) {
        AblationVariant v = with("stage " + std::to_string(s), base.use_temporal_branch, true, g);
        v.model.stacking_stage = s;
        v.model.use_neck = false;
        rows.push_back(std::move(v));
      }
      break;
  }
  return rows;
}

AblationTable run_ablation(AblationSuite suite, const ModelConfig& base,
                           const Dataset& train_set, const Dataset& val_set,
                           const TrainConfig& train_config) {
  AblationTable table;
  table.suite = suite;
  for (const AblationVariant& v : ablation_variants(suite, base)) {
    TrainConfig tc = train_config;
    tc.sampler.frames_per_clip = v.model.frames;
    tc.eval_clips = v.eval_clips;
    tc.checkpoint_dir.clear();
    tc.metrics_path.clear();
    tc.resume = false;
    VidConvModel model(v.model, derive_seed(tc.seed, "init"));
    train(model, train_set, nullptr, tc);
    EvalOptions eo;
    eo.num_clips = v.eval_clips;
    eo.num_crops = tc.eval_crops;
    eo.frames_per_clip = v.model.frames;
    eo.stride = tc.sampler.deterministic_stride.value_or(tc.sampler.stride_min);
    eo.input_size = v.model.input_size;
    eo.seed = derive_seed(tc.seed, "eval");
    eo.batch_size = tc.batch_size;
    const EvalResult r = evaluate_multiview(model, val_set, eo);
    const CostReport cost = count_params(v.model);
    table.rows.push_back({v.label, r.top1, r.top5, cost.params, cost.flops});
  }
  return table;
}

std::string format_ablation_table(const AblationTable& t) {
  std::ostringstream os;
  char line[256];
  os << "# ablation " << ablation_suite_name(t.suite) << '\n';
  std::snprintf(line, sizeof(line), "%-32s %8s %8s %12s %14s\n", "variant", "top1", "top5",
                "params", "flops/view");
  os << line;
  for (const AblationRow& r : t.rows) {
    std::snprintf(line, sizeof(line), "%-32s %8.2f %8.2f %12lld %14lld\n", r.label.c_str(),
                  100.0 * r.top1, 100.0 * r.top5, static_cast<long long>(r.params),
                  static_cast<long long>(r.flops));
    os << line;
  }
  return os.str();
}

std::vector<std::string> ablation_json_lines(const AblationTable& t) {
  std::vector<std::string> out;
  for (const AblationRow& r : t.rows) {
    out.push_back(nlohmann::json{{"suite", ablation_suite_name(t.suite)},
                                 {"variant", r.label},
                                 {"top1", r.top1},
                                 {"top5", r.top5},
                                 {"params", r.params},
                                 {"flops", r.flops}}
                      .dump());
  }
  return out;
}

}  // namespace vidconv

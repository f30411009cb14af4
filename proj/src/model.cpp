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

#include "vidconv/model.hpp"

#include <algorithm>
#include <cctype>

namespace vidconv {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kTiny: return "tiny";
    case Variant::kSmall: return "small";
    case Variant::kBase: return "base";
    case Variant::kCustom: return "custom";
  }
  return "custom";
}

Variant parse_variant(const std::string& name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "tiny" || s == "vic-t" || s == "t") return Variant::kTiny;
  if (s == "small" || s == "vic-s" || s == "s") return Variant::kSmall;
  if (s == "base" || s == "vic-b" || s == "b") return Variant::kBase;
  if (s == "custom" || s == "toy") return Variant::kCustom;
  throw ConfigError("unknown model variant '" + name + "'");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::small() {
  ModelConfig c;
  c.variant = Variant::kSmall;
  c.blocks = {3, 3, 27, 3};
  return c;
}

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.variant = Variant::kBase;
  c.channels = {128, 256, 512, 1024};
  c.blocks = {3, 3, 27, 3};
  // 2x C4; the Base parameter total is only reproduced with this neck width.
  c.head_width = 2048;
  return c;
}

ModelConfig ModelConfig::toy(int num_classes) {
  ModelConfig c;
  c.variant = Variant::kCustom;
  c.channels = {8, 16, 32, 64};
  c.blocks = {1, 1, 2, 1};
  c.head_width = 128;
  c.num_classes = num_classes;
  c.input_size = {64, 64};
  c.drop_path_rate = 0.1;
  return c;
}

ModelConfig ModelConfig::for_variant(Variant v) {
  switch (v) {
    case Variant::kTiny: return tiny();
    case Variant::kSmall: return small();
    case Variant::kBase: return base();
    case Variant::kCustom: break;
  }
  ModelConfig c;
  c.variant = Variant::kCustom;
  return c;
}

int ModelConfig::total_blocks() const {
  int total = 0;
  for (int b : blocks) total += b;
  return total;
}

double ModelConfig::block_drop_rate(int block_index) const {
  const int total = total_blocks();
  if (total <= 1) return 0.0;
  return drop_path_rate * static_cast<double>(block_index) / static_cast<double>(total - 1);
}

void ModelConfig::validate() const {
  for (int s = 0; s < kNumStages; ++s) {
    if (channels[s] <= 0) throw ConfigError("channels must be positive");
    if (blocks[s] < 0) throw ConfigError("block counts must be non-negative");
  }
  if (variant != Variant::kCustom) {
    const ModelConfig ref = for_variant(variant);
    if (channels != ref.channels || blocks != ref.blocks) {
      throw ConfigError("channels/blocks of variant '" + variant_name(variant) +
                        "' must match its reference configuration; use 'custom' to change them");
    }
  }
  if (grid.h <= 0 || grid.w <= 0) throw ConfigError("grid must be positive");
  if (frames <= 0) throw ConfigError("frames must be positive");
  const bool needs_grid = spatial_stacking || use_temporal_branch || use_neck;
  if (needs_grid && frames != grid.cells()) {
    throw ConfigError("frames (" + std::to_string(frames) + ") must equal grid h*w (" +
                      std::to_string(grid.cells()) + ")");
  }
  if (stacking_stage < 1 || stacking_stage > kNumStages) {
    throw ConfigError("stacking_stage must be in 1..4");
  }
  if (head_width <= 0) throw ConfigError("head_width must be positive");
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw ConfigError("drop_path_rate must lie in [0, 1)");
  }
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("head_dropout must lie in [0, 1)");
  }
  if (input_size.h <= 0 || input_size.w <= 0 || input_size.h % 32 != 0 ||
      input_size.w % 32 != 0) {
    throw ConfigError("input size must be positive and divisible by 32");
  }
}

template <typename T>
BasicTensor<T> fused_features(const BasicTensor<T>& x, const BlockParams<T>& p,
                              const BlockContext& ctx) {
  const std::int64_t c = x.dim(1);
  BasicTensor<T> s = conv2d(x, p.dw_weight, p.dw_bias, ConvSpec::depthwise(c, {7, 7}, {3, 3}));
  if (!ctx.temporal) return s;
  if (!p.alpha.defined() || p.alpha.rank() != 1 || p.alpha.dim(0) != c) {
    throw ShapeError("vidconv_block: alpha must be [" + std::to_string(c) + "]");
  }
  const GridSize g = ctx.grid.grid();
  BasicTensor<T> tiled;
  if (ctx.layout == BlockLayout::kCollage) {
    BasicTensor<T> t = temporal_dilated_conv(x, p.temporal_weight, p.temporal_bias, ctx.grid);
    if (ctx.temporal_shape != nullptr) *ctx.temporal_shape = t.shape();
    tiled = tile_grid(scale_channels(t, p.alpha), g);
  } else {
    BasicTensor<T> t =
        temporal_dilated_conv(collage(x, ctx.grid), p.temporal_weight, p.temporal_bias, ctx.grid);
    if (ctx.temporal_shape != nullptr) *ctx.temporal_shape = t.shape();
    tiled = uncollage(tile_grid(scale_channels(t, p.alpha), g), ctx.grid);
  }
  return add(s, tiled);
}

template <typename T>
BasicTensor<T> vidconv_block(const BasicTensor<T>& x, const BlockParams<T>& p,
                             const BlockContext& ctx) {
  const std::int64_t c = x.dim(1);
  if (ctx.layout == BlockLayout::kCollage) ctx.grid.tile_of(x.dim(2), x.dim(3));
  BasicTensor<T> f = fused_features(x, p, ctx);
  BasicTensor<T> y = layer_norm_channels(f, p.norm_weight, p.norm_bias);
  y = conv2d(y, p.pw1_weight, p.pw1_bias, ConvSpec{});
  y = gelu(y, ctx.gelu);
  y = conv2d(y, p.pw2_weight, p.pw2_bias, ConvSpec{});
  if (y.dim(1) != c) throw ShapeError("vidconv_block: MLP must map back to input channels");
  y = scale_channels(y, p.layer_scale);
  if (ctx.training && ctx.drop_prob > 0.0) {
    if (ctx.rng == nullptr) throw ConfigError("vidconv_block: drop path needs an rng");
    y = drop_path(y, ctx.drop_prob, *ctx.rng, true);
  }
  return add(x, y);
}

template <typename T>
BasicTensor<T> neck_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                            const BasicTensor<T>& bias, const BasicTensor<T>& norm_weight,
                            const BasicTensor<T>& norm_bias, const CollageLayout& layout,
                            GeluMode gelu_mode) {
  if (x.rank() != 4) throw ShapeError("neck: input must be [N,C,hH,wW]");
  const GridSize g = layout.grid();
  const Extent2 tile = layout.tile_of(x.dim(2), x.dim(3));
  ConvSpec spec = ConvSpec::dense({g.h, g.w}, {1, 1}, {0, 0}, tile);
  BasicTensor<T> y = conv2d(x, weight, bias, spec);
  y = layer_norm_channels(y, norm_weight, norm_bias);
  return gelu(y, gelu_mode);
}

const TraceEntry* ForwardTrace::find(const std::string& label) const {
  for (const auto& e : entries) {
    if (e.label == label) return &e;
  }
  return nullptr;
}

namespace {

std::string block_prefix(int stage, int index) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(index) + ".";
}

}  // namespace

Tensor& VidConvModel::add_param(const std::string& name, Shape shape, ParamGroup group) {
  index_[name] = params_.size();
  params_.push_back({name, Tensor::zeros(std::move(shape), true), group});
  return params_.back().value;
}

VidConvModel::VidConvModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.channels;
  const GridSize g = config_.grid;
  Rng rng(seed);
  auto init_normal = [&](Tensor& t) {
    for (auto& v : t.data()) v = static_cast<float>(rng.truncated_normal(config_.init_std));
  };
  auto fill = [](Tensor& t, double v) {
    std::fill(t.data().begin(), t.data().end(), static_cast<float>(v));
  };
  const auto bb = ParamGroup::kBackbone;

  init_normal(add_param("stem.conv.weight", {ch[0], 3, 4, 4}, bb));
  add_param("stem.conv.bias", {ch[0]}, bb);
  fill(add_param("stem.norm.weight", {ch[0]}, bb), 1.0);
  add_param("stem.norm.bias", {ch[0]}, bb);

  for (int s = 0; s < kNumStages; ++s) {
    const std::int64_t c = ch[s];
    const std::string stage = "stages." + std::to_string(s) + ".";
    if (s > 0) {
      fill(add_param(stage + "downsample.norm.weight", {ch[s - 1]}, bb), 1.0);
      add_param(stage + "downsample.norm.bias", {ch[s - 1]}, bb);
      init_normal(add_param(stage + "downsample.conv.weight", {c, ch[s - 1], 2, 2}, bb));
      add_param(stage + "downsample.conv.bias", {c}, bb);
    }
    for (int b = 0; b < config_.blocks[s]; ++b) {
      const std::string pre = block_prefix(s, b);
      init_normal(add_param(pre + "dwconv.weight", {c, 1, 7, 7}, bb));
      add_param(pre + "dwconv.bias", {c}, bb);
      if (config_.has_temporal(s)) {
        init_normal(add_param(pre + "temporal.weight", {c, 1, g.h, g.w}, bb));
        if (config_.temporal_bias) add_param(pre + "temporal.bias", {c}, bb);
        fill(add_param(pre + "alpha", {c}, bb), config_.alpha_init);
      }
      fill(add_param(pre + "norm.weight", {c}, bb), 1.0);
      add_param(pre + "norm.bias", {c}, bb);
      init_normal(add_param(pre + "pwconv1.weight", {4 * c, c, 1, 1}, bb));
      add_param(pre + "pwconv1.bias", {4 * c}, bb);
      init_normal(add_param(pre + "pwconv2.weight", {c, 4 * c, 1, 1}, bb));
      add_param(pre + "pwconv2.bias", {c}, bb);
      fill(add_param(pre + "layer_scale", {c}, bb), config_.layer_scale_init);
    }
  }

  const std::int64_t c4 = ch[kNumStages - 1];
  std::int64_t features = c4;
  if (config_.use_neck) {
    const std::int64_t hw = config_.head_width;
    init_normal(add_param("neck.conv.weight", {hw, c4, g.h, g.w}, ParamGroup::kHead));
    add_param("neck.conv.bias", {hw}, ParamGroup::kHead);
    fill(add_param("neck.norm.weight", {hw}, ParamGroup::kHead), 1.0);
    add_param("neck.norm.bias", {hw}, ParamGroup::kHead);
    features = hw;
  } else {
    fill(add_param("norm.weight", {c4}, bb), 1.0);
    add_param("norm.bias", {c4}, bb);
  }
  init_normal(add_param("head.weight", {config_.num_classes, features}, ParamGroup::kHead));
  add_param("head.bias", {config_.num_classes}, ParamGroup::kHead);
}

const Parameter* VidConvModel::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Tensor& VidConvModel::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return params_[it->second].value;
}

std::int64_t VidConvModel::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

BlockParams<float> VidConvModel::block(int stage, int index) const {
  const std::string pre = block_prefix(stage, index);
  auto get = [&](const std::string& n) -> Tensor {
    const Parameter* p = find(pre + n);
    return p != nullptr ? p->value : Tensor{};
  };
  BlockParams<float> b;
  b.dw_weight = get("dwconv.weight");
  b.dw_bias = get("dwconv.bias");
  b.temporal_weight = get("temporal.weight");
  b.temporal_bias = get("temporal.bias");
  b.alpha = get("alpha");
  b.norm_weight = get("norm.weight");
  b.norm_bias = get("norm.bias");
  b.pw1_weight = get("pwconv1.weight");
  b.pw1_bias = get("pwconv1.bias");
  b.pw2_weight = get("pwconv2.weight");
  b.pw2_bias = get("pwconv2.bias");
  b.layer_scale = get("layer_scale");
  if (!b.dw_weight.defined()) {
    throw ConfigError("no block " + std::to_string(index) + " in stage " + std::to_string(stage));
  }
  return b;
}

Tensor VidConvModel::forward(const Tensor& clip, bool training, Rng* rng,
                             ForwardTrace* trace) const {
  const ModelConfig& cfg = config_;
  if (clip.rank() != 4 || clip.dim(1) != 3) {
    throw ShapeError("forward: clip must be [N*L,3,H,W], got " + shape_str(clip.shape()));
  }
  if (clip.dim(0) % cfg.frames != 0) {
    throw ShapeError("forward: batch of " + std::to_string(clip.dim(0)) +
                     " frames is not a multiple of L=" + std::to_string(cfg.frames));
  }
  if (clip.dim(2) % 32 != 0 || clip.dim(3) % 32 != 0) {
    throw ShapeError("forward: frame size must be divisible by 32, got " + shape_str(clip.shape()));
  }
  if (training && rng == nullptr && (cfg.drop_path_rate > 0.0 || cfg.head_dropout > 0.0)) {
    throw ConfigError("forward: training with drop path or dropout needs an rng");
  }
  auto record = [&](const std::string& label, const Tensor& t) {
    if (trace != nullptr) trace->entries.push_back({label, t.shape()});
  };
  auto p = [&](const std::string& name) -> const Tensor& {
    const Parameter* found = find(name);
    if (found == nullptr) throw ConfigError("missing parameter '" + name + "'");
    return found->value;
  };
  const CollageLayout layout = cfg.layout();

  Tensor x = conv2d(clip, p("stem.conv.weight"), p("stem.conv.bias"),
                    ConvSpec::dense({4, 4}, {4, 4}));
  x = layer_norm_channels(x, p("stem.norm.weight"), p("stem.norm.bias"));
  record("stem", x);

  bool collaged = false;
  int block_index = 0;
  for (int s = 0; s < kNumStages; ++s) {
    const std::string stage = "stages." + std::to_string(s) + ".";
    const std::string label = "stage" + std::to_string(s + 1);
    if (s > 0) {
      x = layer_norm_channels(x, p(stage + "downsample.norm.weight"),
                              p(stage + "downsample.norm.bias"));
      x = conv2d(x, p(stage + "downsample.conv.weight"), p(stage + "downsample.conv.bias"),
                 ConvSpec::dense({2, 2}, {2, 2}));
      record(label + ".input", x);
    }
    BlockContext ctx;
    ctx.layout = collaged ? BlockLayout::kCollage : BlockLayout::kFrames;
    ctx.grid = layout;
    ctx.temporal = cfg.has_temporal(s);
    ctx.training = training;
    ctx.rng = rng;
    ctx.gelu = cfg.gelu;
    for (int b = 0; b < cfg.blocks[s]; ++b, ++block_index) {
      ctx.drop_prob = cfg.block_drop_rate(block_index);
      const BlockParams<float> bp = block(s, b);
      Shape temporal_shape;
      ctx.temporal_shape = trace != nullptr ? &temporal_shape : nullptr;
      x = vidconv_block(x, bp, ctx);
      if (trace != nullptr && ctx.temporal) {
        trace->entries.push_back({label + ".block" + std::to_string(b) + ".temporal",
                                  temporal_shape});
      }
    }
    record(label, x);
    if (cfg.spatial_stacking && s + 1 == cfg.stacking_stage) {
      x = collage(x, layout);
      collaged = true;
      record("collage", x);
    }
  }

  if (trace != nullptr && trace->capture_last_stage) {
    if (grad_mode_enabled() && x.requires_grad()) x.retain_grad();
    trace->last_stage = x;
    trace->last_stage_is_collage = collaged;
  }

  Tensor pooled;
  if (cfg.use_neck) {
    if (!collaged) x = collage(x, layout);
    x = neck_forward(x, p("neck.conv.weight"), p("neck.conv.bias"), p("neck.norm.weight"),
                     p("neck.norm.bias"), layout, cfg.gelu);
    record("neck", x);
    pooled = global_avg_pool(x);
  } else {
    if (!collaged && cfg.frames > 1) {
      // Mean over frames equals the mean over the frames' collage.
      x = cfg.spatial_stacking || cfg.use_temporal_branch
              ? collage(x, layout)
              : collage(x, CollageLayout(GridSize{1, cfg.frames}));
    }
    pooled = global_avg_pool(x);
    const std::int64_t n = pooled.dim(0), c = pooled.dim(1);
    pooled = layer_norm_channels(pooled.reshape({n, c, 1, 1}), p("norm.weight"), p("norm.bias"))
                 .reshape({n, c});
  }
  record("pooled", pooled);
  if (training && cfg.head_dropout > 0.0) pooled = dropout(pooled, cfg.head_dropout, *rng, true);
  Tensor logits = linear(pooled, p("head.weight"), p("head.bias"));
  record("logits", logits);
  return logits;
}

VidConvModel build_model(const ModelConfig& config, std::uint64_t seed) {
  return VidConvModel(config, seed);
}

#define VIDCONV_INSTANTIATE_MODEL(T)                                                          \
  template BasicTensor<T> fused_features(const BasicTensor<T>&, const BlockParams<T>&,       \
                                         const BlockContext&);                               \
  template BasicTensor<T> vidconv_block(const BasicTensor<T>&, const BlockParams<T>&,        \
                                        const BlockContext&);                                \
  template BasicTensor<T> neck_forward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                       const BasicTensor<T>&, const BasicTensor<T>&,         \
                                       const BasicTensor<T>&, const CollageLayout&, GeluMode);

VIDCONV_INSTANTIATE_MODEL(float)
VIDCONV_INSTANTIATE_MODEL(double)

#undef VIDCONV_INSTANTIATE_MODEL

}  // namespace vidconv

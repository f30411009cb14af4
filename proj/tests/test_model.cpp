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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "vidconv/analysis.hpp"
#include "vidconv/collage.hpp"
#include "vidconv/model.hpp"

namespace vidconv {
namespace {

using testing::random_tensor;

Tensor random_clip(const ModelConfig& cfg, std::int64_t clips, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor<float>({clips * cfg.frames, 3, cfg.input_size.h, cfg.input_size.w}, rng);
}

BlockParams<double> random_block(std::int64_t c, GridSize g, Rng& rng) {
  BlockParams<double> p;
  p.dw_weight = random_tensor<double>({c, 1, 7, 7}, rng);
  p.dw_bias = random_tensor<double>({c}, rng);
  p.temporal_weight = random_tensor<double>({c, 1, g.h, g.w}, rng);
  p.temporal_bias = random_tensor<double>({c}, rng);
  p.alpha = random_tensor<double>({c}, rng, 0.5, 1.5);
  p.norm_weight = random_tensor<double>({c}, rng, 0.5, 1.5);
  p.norm_bias = random_tensor<double>({c}, rng);
  p.pw1_weight = random_tensor<double>({4 * c, c, 1, 1}, rng);
  p.pw1_bias = random_tensor<double>({4 * c}, rng);
  p.pw2_weight = random_tensor<double>({c, 4 * c, 1, 1}, rng);
  p.pw2_bias = random_tensor<double>({c}, rng);
  p.layer_scale = random_tensor<double>({c}, rng, 0.5, 1.5);
  return p;
}

// ---- configuration ------------------------------------------------------------

TEST(ModelConfig, NamedVariantsMatchReferenceTable) {
  const auto t = ModelConfig::tiny(), s = ModelConfig::small(), b = ModelConfig::base();
  EXPECT_EQ(t.channels, (std::array<int, 4>{96, 192, 384, 768}));
  EXPECT_EQ(t.blocks, (std::array<int, 4>{3, 3, 9, 3}));
  EXPECT_EQ(s.channels, t.channels);
  EXPECT_EQ(s.blocks, (std::array<int, 4>{3, 3, 27, 3}));
  EXPECT_EQ(b.channels, (std::array<int, 4>{128, 256, 512, 1024}));
  EXPECT_EQ(b.blocks, s.blocks);
  EXPECT_EQ(t.head_width, 2304);
  EXPECT_EQ(s.head_width, 2304);
}

TEST(ModelConfig, ValidationRejectsBadConfigs) {
  auto bad = [](auto edit) {
    ModelConfig c = ModelConfig::toy();
    edit(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](ModelConfig& c) { c.frames = 8; });
  bad([](ModelConfig& c) { c.input_size = {100, 64}; });
  bad([](ModelConfig& c) { c.stacking_stage = 5; });
  bad([](ModelConfig& c) { c.drop_path_rate = 1.0; });
  bad([](ModelConfig& c) { c.head_dropout = -0.1; });
  bad([](ModelConfig& c) { c.num_classes = 0; });
  bad([](ModelConfig& c) { c.variant = Variant::kTiny; });  // toy widths under a named variant
  EXPECT_NO_THROW(ModelConfig::toy().validate());
  EXPECT_NO_THROW(ModelConfig::base().validate());
  EXPECT_THROW(parse_variant("huge"), ConfigError);
}

TEST(ModelConfig, DropPathRampsLinearly) {
  ModelConfig c = ModelConfig::tiny();
  c.drop_path_rate = 0.25;
  EXPECT_EQ(c.block_drop_rate(0), 0.0);
  EXPECT_DOUBLE_EQ(c.block_drop_rate(c.total_blocks() - 1), 0.25);
  EXPECT_DOUBLE_EQ(c.block_drop_rate(9), 0.25 * 9 / 17);
}

// ---- parameters ---------------------------------------------------------------

TEST(Model, ReferenceParameterCounts) {
  ModelConfig t = ModelConfig::tiny();
  EXPECT_NEAR(static_cast<double>(build_model(t, 0).parameter_count()) / 1e6, 44.7, 44.7 * 0.02);
  t.use_neck = false;
  EXPECT_NEAR(static_cast<double>(build_model(t, 0).parameter_count()) / 1e6, 28.19, 28.19 * 0.02);
}

TEST(Model, CountsIncreaseWithVariant) {
  const auto t = count_params(ModelConfig::tiny()).params;
  const auto s = count_params(ModelConfig::small()).params;
  const auto b = count_params(ModelConfig::base()).params;
  EXPECT_LT(t, s);
  EXPECT_LT(s, b);
}

TEST(Model, NeckConvParameterCount) {
  const VidConvModel m = build_model(ModelConfig::tiny(), 0);
  EXPECT_EQ(m.find("neck.conv.weight")->value.numel() + m.find("neck.conv.bias")->value.numel(),
            768LL * 2304 * 9 + 2304);
}

TEST(Model, AlphaOnlyInLaterStagesWithTemporalBranch) {
  for (int k = 1; k <= 4; ++k) {
    for (bool temporal : {true, false}) {
      ModelConfig c = ModelConfig::toy();
      c.stacking_stage = k;
      c.use_temporal_branch = temporal;
      const VidConvModel m = build_model(c, 1);
      for (int s = 0; s < kNumStages; ++s) {
        for (int b = 0; b < c.blocks[s]; ++b) {
          const std::string pre = "stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".";
          const bool expect = temporal && s + 1 > k;
          EXPECT_EQ(m.find(pre + "alpha") != nullptr, expect) << pre << " k=" << k;
          EXPECT_EQ(m.find(pre + "temporal.weight") != nullptr, expect) << pre;
        }
      }
    }
  }
}

TEST(Model, InitializationIsSeededAndAlphaStartsAtOnePercent) {
  const VidConvModel a = build_model(ModelConfig::toy(), 5);
  const VidConvModel b = build_model(ModelConfig::toy(), 5);
  const VidConvModel c = build_model(ModelConfig::toy(), 6);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value.values(), b.parameters()[i].value.values());
    any_diff |= a.parameters()[i].value.values() != c.parameters()[i].value.values();
  }
  EXPECT_TRUE(any_diff);
  for (float v : a.find("stages.2.blocks.0.alpha")->value.values()) EXPECT_FLOAT_EQ(v, 0.01F);
  for (float v : a.find("stages.0.blocks.0.dwconv.weight")->value.values()) {
    EXPECT_LE(std::abs(v), 0.04F + 1e-7F);  // truncated at two std
  }
}

// ---- shapes -------------------------------------------------------------------

TEST(Model, TinyShapeTraceAt224) {
  const VidConvModel m = build_model(ModelConfig::tiny(), 0);
  ForwardTrace trace;
  const Tensor clip = Tensor::zeros({9, 3, 224, 224});
  NoGradGuard guard;
  const Tensor logits = m.forward(clip, false, nullptr, &trace);
  EXPECT_EQ(logits.shape(), (Shape{1, 400}));
  auto at = [&](const std::string& label) {
    const TraceEntry* e = trace.find(label);
    return e != nullptr ? e->shape : Shape{};
  };
  EXPECT_EQ(at("stage2"), (Shape{9, 192, 28, 28}));
  EXPECT_EQ(at("collage"), (Shape{1, 192, 84, 84}));
  EXPECT_EQ(at("stage3.input"), (Shape{1, 384, 42, 42}));
  EXPECT_EQ(at("stage4"), (Shape{1, 768, 21, 21}));
  EXPECT_EQ(at("neck"), (Shape{1, 2304, 7, 7}));
  EXPECT_EQ(at("pooled"), (Shape{1, 2304}));
  EXPECT_EQ(at("stage3.block0.temporal"), (Shape{1, 384, 14, 14}));
  EXPECT_EQ(at("stage4.block2.temporal"), (Shape{1, 768, 7, 7}));
  EXPECT_EQ(at("stage3.block8.temporal"), (Shape{1, 384, 14, 14}));
}

TEST(Model, ToyShapesForEveryStackingStage) {
  for (int k = 1; k <= 4; ++k) {
    ModelConfig c = ModelConfig::toy(3);
    c.stacking_stage = k;
    const VidConvModel m = build_model(c, 0);
    ForwardTrace trace;
    NoGradGuard guard;
    const Tensor logits = m.forward(random_clip(c, 2, 1), false, nullptr, &trace);
    EXPECT_EQ(logits.shape(), (Shape{2, 3}));
    const std::int64_t side = 64 / (4 << (k - 1));
    EXPECT_EQ(trace.find("collage")->shape, (Shape{2, c.channels[k - 1], 3 * side, 3 * side}));
    EXPECT_EQ(trace.find("neck")->shape, (Shape{2, 128, 2, 2}));
  }
}

TEST(Model, ForwardRejectsBadClips) {
  const VidConvModel m = build_model(ModelConfig::toy(), 0);
  EXPECT_THROW(m.forward(Tensor::zeros({8, 3, 64, 64}), false), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({9, 3, 48, 64}), false), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({9, 1, 64, 64}), false), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({9, 3, 64, 64}), true), ConfigError);  // no rng
}

TEST(Model, EvalForwardIsDeterministic) {
  const ModelConfig c = ModelConfig::toy();
  const VidConvModel m = build_model(c, 3);
  const Tensor clip = random_clip(c, 2, 4);
  NoGradGuard guard;
  EXPECT_EQ(m.forward(clip, false).values(), m.forward(clip, false).values());
  Rng a(9), b(9);
  EXPECT_EQ(m.forward(clip, true, &a).values(), m.forward(clip, true, &b).values());
}

TEST(Model, PerFrameModelIgnoresFrameOrder) {
  ModelConfig c = ModelConfig::toy();
  c.spatial_stacking = false;
  c.use_temporal_branch = false;
  c.use_neck = false;
  const VidConvModel m = build_model(c, 7);
  const Tensor clip = random_clip(c, 1, 8);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(10);
  for (int i = 8; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  const std::int64_t plane = 3 * 64 * 64;
  std::vector<float> shuffled(clip.values().size());
  for (int t = 0; t < 9; ++t)
    std::copy_n(clip.values().begin() + perm[static_cast<std::size_t>(t)] * plane, plane,
                shuffled.begin() + t * plane);
  NoGradGuard guard;
  const auto a = m.forward(clip, false).values();
  const auto b = m.forward(Tensor(clip.shape(), shuffled), false).values();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5 * (1 + std::abs(a[i])));
}

TEST(Model, FullModelIsSensitiveToFrameOrder) {
  ModelConfig c = ModelConfig::toy();
  c.alpha_init = 1.0;
  const VidConvModel m = build_model(c, 7);
  const Tensor clip = random_clip(c, 1, 8);
  const std::int64_t plane = 3 * 64 * 64;
  std::vector<float> rev(clip.values().size());
  for (int t = 0; t < 9; ++t)
    std::copy_n(clip.values().begin() + (8 - t) * plane, plane, rev.begin() + t * plane);
  NoGradGuard guard;
  EXPECT_NE(m.forward(clip, false).values(), m.forward(Tensor(clip.shape(), rev), false).values());
}

// ---- fusion -------------------------------------------------------------------

TEST(Fusion, AlphaZeroGivesPlainBlockBitForBit) {
  Rng rng(20);
  const GridSize g{2, 2};
  for (BlockLayout layout : {BlockLayout::kCollage, BlockLayout::kFrames}) {
    auto p = random_block(4, g, rng);
    p.alpha = Tensor64::zeros({4});
    const Shape xs = layout == BlockLayout::kCollage ? Shape{2, 4, 12, 10} : Shape{8, 4, 6, 5};
    const auto x = random_tensor<double>(xs, rng);
    BlockContext with;
    with.grid = CollageLayout(g);
    with.layout = layout;
    BlockContext without = with;
    without.temporal = false;
    EXPECT_EQ(vidconv_block(x, p, with).values(), vidconv_block(x, p, without).values());
    EXPECT_EQ(fused_features(x, p, with).values(),
              conv2d(x, p.dw_weight, p.dw_bias, ConvSpec::depthwise(4, {7, 7}, {3, 3})).values());
  }
}

TEST(Fusion, AffineInAlpha) {
  Rng rng(21);
  const GridSize g{3, 3};
  auto p = random_block(3, g, rng);
  const auto x = random_tensor<double>({1, 3, 9, 9}, rng);
  BlockContext ctx;
  ctx.grid = CollageLayout(g);
  auto f_at = [&](std::vector<double> a) {
    p.alpha = Tensor64({3}, std::move(a));
    return fused_features(x, p, ctx).values();
  };
  const auto f0 = f_at({0, 0, 0}), f1 = f_at({1, 1, 1}), f2 = f_at({2.5, 2.5, 2.5});
  for (std::size_t i = 0; i < f0.size(); ++i) {
    EXPECT_NEAR(f2[i] - f0[i], 2.5 * (f1[i] - f0[i]), 1e-12);
  }
}

TEST(Fusion, TiledTemporalCellsAreIdentical) {
  Rng rng(22);
  for (GridSize g : {GridSize{3, 3}, GridSize{2, 2}, GridSize{4, 4}}) {
    const auto x = random_tensor<float>({2, 5, g.h * 6, g.w * 6}, rng);
    const auto w = random_tensor<float>({5, 1, g.h, g.w}, rng);
    const auto t = temporal_dilated_conv(x, w, Tensor(), CollageLayout(g));
    const auto cells = uncollage(tile_grid(t, g), CollageLayout(g));
    const std::size_t per = static_cast<std::size_t>(t.numel() / 2);
    for (std::int64_t n = 0; n < 2; ++n)
      for (int c = 0; c < g.cells(); ++c) {
        const auto begin = cells.values().begin() + static_cast<std::ptrdiff_t>((n * g.cells() + c) * static_cast<std::int64_t>(per));
        EXPECT_TRUE(std::equal(begin, begin + static_cast<std::ptrdiff_t>(per),
                               t.values().begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::int64_t>(per))));
      }
  }
}

TEST(Fusion, DeltaKernelSelectsOneFrame) {
  Rng rng(23);
  const GridSize g{3, 3};
  const auto frames = random_tensor<float>({9, 2, 5, 5}, rng);
  const CollageLayout layout(g);
  Tensor w = Tensor::zeros({2, 1, 3, 3});
  w.data()[4] = 1.0F;
  w.data()[9 + 4] = 1.0F;
  const auto t = temporal_dilated_conv(collage(frames, layout), w, Tensor(), layout);
  const auto begin = frames.values().begin() + 4 * 50;
  EXPECT_TRUE(std::equal(begin, begin + 50, t.values().begin()));
}

TEST(Fusion, CollageAndFramesLayoutsAgree) {
  Rng rng(24);
  const GridSize g{2, 3};
  const CollageLayout layout(g);
  const auto p = random_block(3, g, rng);
  const auto frames = random_tensor<double>({12, 3, 4, 4}, rng);
  BlockContext coll;
  coll.grid = layout;
  // In the frames layout the spatial conv cannot cross tile borders, so
  // compare only the temporal part: F - S.
  BlockContext fr = coll;
  fr.layout = BlockLayout::kFrames;
  const auto s_frames = conv2d(frames, p.dw_weight, p.dw_bias, ConvSpec::depthwise(3, {7, 7}, {3, 3}));
  const auto t_frames = add(fused_features(frames, p, fr), mul(s_frames, Tensor64::full(s_frames.shape(), -1.0)));
  const auto x = collage(frames, layout);
  const auto s_coll = conv2d(x, p.dw_weight, p.dw_bias, ConvSpec::depthwise(3, {7, 7}, {3, 3}));
  const auto t_coll = add(fused_features(x, p, coll), mul(s_coll, Tensor64::full(s_coll.shape(), -1.0)));
  const auto back = uncollage(t_coll, layout).values();
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], t_frames.values()[i], 1e-12);
}

TEST(Fusion, BlockMatchesStraightLineComposition) {
  Rng rng(25);
  const GridSize g{2, 2};
  const auto p = random_block(8, g, rng);
  const auto x = random_tensor<double>({1, 8, 12, 12}, rng);
  BlockContext ctx;
  ctx.grid = CollageLayout(g);
  const auto got = vidconv_block(x, p, ctx);

  const auto s = conv2d(x, p.dw_weight, p.dw_bias, ConvSpec::depthwise(8, {7, 7}, {3, 3}));
  const auto t = temporal_dilated_conv(x, p.temporal_weight, p.temporal_bias, ctx.grid);
  const auto f = add(s, tile_grid(scale_channels(t, p.alpha), g));
  auto y = layer_norm_channels(f, p.norm_weight, p.norm_bias);
  y = gelu(conv2d(y, p.pw1_weight, p.pw1_bias, ConvSpec{}));
  y = conv2d(y, p.pw2_weight, p.pw2_bias, ConvSpec{});
  const auto expect = add(x, scale_channels(y, p.layer_scale));
  ASSERT_EQ(got.shape(), expect.shape());
  for (std::size_t i = 0; i < expect.values().size(); ++i) {
    EXPECT_NEAR(got.values()[i], expect.values()[i], 1e-6);
  }
}

TEST(Model, FrozenZeroAlphaEqualsModelWithoutTemporalBranch) {
  ModelConfig with = ModelConfig::toy();
  ModelConfig without = with;
  without.use_temporal_branch = false;
  VidConvModel a = build_model(with, 11);
  VidConvModel b = build_model(without, 11);
  for (auto& p : a.parameters()) {
    if (p.name.ends_with(".alpha")) std::fill(p.value.data().begin(), p.value.data().end(), 0.0F);
  }
  for (auto& p : b.parameters()) p.value = a.find(p.name)->value.clone();
  const Tensor clip = random_clip(with, 2, 12);
  NoGradGuard guard;
  EXPECT_EQ(a.forward(clip, false).values(), b.forward(clip, false).values());
}

TEST(Model, SpatialConvMixesAcrossTileBorders) {
  // Temporal branch off so the only cross-frame path is the spatial conv on
  // the collage. A pixel at the right edge of frame 0 must reach frame 1.
  for (bool stacking : {true, false}) {
    ModelConfig c = ModelConfig::toy();
    c.use_temporal_branch = false;
    c.spatial_stacking = stacking;
    const VidConvModel m = build_model(c, 13);
    Tensor clip = random_clip(c, 1, 14);
    auto last_tile1 = [&](const Tensor& input) {
      ForwardTrace trace;
      trace.capture_last_stage = true;
      NoGradGuard guard;
      m.forward(input, false, nullptr, &trace);
      Tensor s = trace.last_stage;
      if (trace.last_stage_is_collage) s = uncollage(s, c.layout());
      const std::int64_t per = s.numel() / s.dim(0);
      return std::vector<float>(s.values().begin() + per, s.values().begin() + 2 * per);
    };
    const auto before = last_tile1(clip);
    for (int y = 0; y < 64; ++y)
      for (int ch = 0; ch < 3; ++ch) clip.data()[static_cast<std::size_t>((ch * 64 + y) * 64 + 63)] += 5.0F;
    EXPECT_EQ(before != last_tile1(clip), stacking);
  }
}

TEST(Model, EveryParameterReceivesGradient) {
  ModelConfig c = ModelConfig::toy(4);
  c.layer_scale_init = 0.5;
  c.drop_path_rate = 0.0;
  VidConvModel m = build_model(c, 15);
  for (auto& p : m.parameters()) {
    p.value.zero_grad();
    p.value.set_requires_grad(true);
  }
  const Tensor logits = m.forward(random_clip(c, 2, 16), false);
  const std::vector<int> labels{1, 3};
  auto ce = softmax_cross_entropy(logits, labels);
  ce.loss.backward();
  for (const auto& p : m.parameters()) {
    ASSERT_TRUE(p.value.has_grad()) << p.name;
    const bool nonzero = std::any_of(p.value.grad().begin(), p.value.grad().end(),
                                     [](float g) { return g != 0.0F; });
    EXPECT_TRUE(nonzero) << p.name;
  }
}

}  // namespace
}  // namespace vidconv

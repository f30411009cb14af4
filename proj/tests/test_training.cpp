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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "test_util.hpp"
#include "vidconv/checkpoint.hpp"
#include "vidconv/training.hpp"

namespace vidconv {
namespace {

namespace fs = std::filesystem;

constexpr Extent2 kSmall{32, 32};

Parameter make_param(std::string name, std::vector<float> v, ParamGroup g = ParamGroup::kBackbone) {
  const auto n = static_cast<std::int64_t>(v.size());
  return {std::move(name), Tensor({n}, std::move(v), true), g};
}

void set_grad(Parameter& p, const std::vector<float>& g) {
  auto dst = p.value.mutable_grad();
  std::copy(g.begin(), g.end(), dst.begin());
}

ModelConfig small_model(Task task) {
  ModelConfig c = ModelConfig::toy(task_num_classes(task));
  c.input_size = kSmall;
  return c;
}

TrainConfig small_train(std::uint64_t seed, int epochs = 1) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.seed = seed;
  t.sampler = {9, 2, 2, std::nullopt, false};
  t.warmup_epochs = 0;
  t.lr_init = 2e-3;
  return t;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vidconv_train_" + name);
  fs::remove_all(p);
  return p;
}

// ---- AdamW --------------------------------------------------------------------

TEST(AdamW, MatchesScalarReference) {
  std::vector<Parameter> params{make_param("w", {0.5F, -0.25F, 0.75F})};
  const std::vector<float> g{0.1F, -0.3F, 0.02F};
  AdamWConfig hp;
  OptimState st = make_optim_state(params, hp);
  std::vector<double> p{0.5, -0.25, 0.75}, m(3, 0.0), v(3, 0.0);
  const double lr = 1e-3;
  for (int step = 1; step <= 3; ++step) {
    set_grad(params[0], g);
    adamw_step(params, st, lr);
    params[0].value.zero_grad();
    for (int i = 0; i < 3; ++i) {
      m[i] = hp.beta1 * m[i] + (1 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1 - hp.beta2) * static_cast<double>(g[i]) * g[i];
      const double mh = m[i] / (1 - std::pow(hp.beta1, step));
      const double vh = v[i] / (1 - std::pow(hp.beta2, step));
      p[i] = p[i] - lr * hp.weight_decay * p[i] - lr * mh / (std::sqrt(vh) + hp.eps);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(params[0].value.values()[i], p[i], 1e-7) << step;
  }
  EXPECT_EQ(st.step, 3);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
  std::vector<Parameter> params{make_param("w", {1.0F, -2.0F, 0.5F})};
  OptimState st = make_optim_state(params, AdamWConfig{0.05, 0.9, 0.999, 1e-8});
  set_grad(params[0], {0.0F, 0.0F, 0.0F});
  adamw_step(params, st, 0.001);
  const std::vector<float> expect{1.0F * (1 - 5e-5F), -2.0F * (1 - 5e-5F), 0.5F * (1 - 5e-5F)};
  for (int i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(params[0].value.values()[i], expect[i]);
  for (float x : st.m[0]) EXPECT_EQ(x, 0.0F);
  for (float x : st.v[0]) EXPECT_EQ(x, 0.0F);
}

TEST(AdamW, ConstantGradientApproachesSignStep) {
  std::vector<Parameter> params{make_param("w", {0.0F, 0.0F})};
  OptimState st = make_optim_state(params, AdamWConfig{0.0, 0.9, 0.999, 1e-8});
  float before0 = 0, before1 = 0;
  for (int i = 0; i < 200; ++i) {
    before0 = params[0].value.values()[0];
    before1 = params[0].value.values()[1];
    set_grad(params[0], {0.7F, -3.0F});
    adamw_step(params, st, 0.01);
    params[0].value.zero_grad();
  }
  EXPECT_NEAR(params[0].value.values()[0] - before0, -0.01, 1e-2 * 0.01);
  EXPECT_NEAR(params[0].value.values()[1] - before1, 0.01, 1e-2 * 0.01);
}

TEST(AdamW, ZeroLearningRateLeavesParametersButUpdatesMoments) {
  std::vector<Parameter> params{make_param("w", {1.0F, 2.0F})};
  OptimState st = make_optim_state(params);
  set_grad(params[0], {0.5F, -0.5F});
  adamw_step(params, st, 0.0);
  EXPECT_EQ(params[0].value.values(), (std::vector<float>{1.0F, 2.0F}));
  EXPECT_NE(st.m[0][0], 0.0F);
  EXPECT_NE(st.v[0][1], 0.0F);
}

TEST(AdamW, GroupMultipliers) {
  std::vector<Parameter> params{make_param("b", {1.0F}), make_param("h", {1.0F}, ParamGroup::kHead)};
  OptimState st = make_optim_state(params, AdamWConfig{}, 0.0);
  set_grad(params[0], {1.0F});
  set_grad(params[1], {1.0F});
  adamw_step(params, st, 0.01);
  EXPECT_EQ(params[0].value.values()[0], 1.0F);
  EXPECT_LT(params[1].value.values()[0], 1.0F);
}

TEST(AdamW, NonFiniteGradientAborts) {
  std::vector<Parameter> params{make_param("w", {1.0F})};
  OptimState st = make_optim_state(params);
  set_grad(params[0], {std::nanf("")});
  EXPECT_THROW(adamw_step(params, st, 0.01), NumericalError);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  std::vector<Parameter> params{make_param("a", {0.0F, 0.0F}), make_param("b", {0.0F})};
  set_grad(params[0], {3.0F, 0.0F});
  set_grad(params[1], {4.0F});
  EXPECT_NEAR(clip_grad_norm(params, 1.0), 5.0, 1e-9);
  EXPECT_NEAR(params[0].value.grad()[0], 0.6, 1e-6);
  EXPECT_NEAR(params[1].value.grad()[0], 0.8, 1e-6);
  EXPECT_NEAR(clip_grad_norm(params, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(params[1].value.grad()[0], 0.8, 1e-6);
}

// ---- schedule -----------------------------------------------------------------

TEST(Schedule, Endpoints) {
  const Schedule s{125, 2500, 1e-3, 5e-6};
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_NEAR(lr_at(s, 125), 1e-3, 1e-12);
  EXPECT_NEAR(lr_at(s, 2500), 5e-6, 1e-12);
  EXPECT_NEAR(lr_at(s, 125 + (2500 - 125) / 2 + 0), (1e-3 + 5e-6) / 2, 1e-6);
  const Schedule even{100, 2100, 1e-3, 5e-6};
  EXPECT_NEAR(lr_at(even, 1100), (1e-3 + 5e-6) / 2, 1e-9);
  EXPECT_NEAR(lr_at(s, 50), 1e-3 * 50 / 125, 1e-15);
  EXPECT_THROW(lr_at(s, -1), ConfigError);
  EXPECT_THROW(lr_at(s, 2501), ConfigError);
}

TEST(Schedule, ContinuousAndMonotone) {
  const Schedule s{40, 400, 1e-3, 5e-6};
  double prev = lr_at(s, 40);
  EXPECT_NEAR(lr_at(s, 39), prev, 1e-3 / 40 + 1e-12);
  EXPECT_NEAR(lr_at(s, 41), prev, 1e-6);
  for (std::int64_t t = 41; t <= 400; ++t) {
    const double lr = lr_at(s, t);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, s.lr_min - 1e-18);
    EXPECT_LE(lr, s.lr_init);
    prev = lr;
  }
  const Schedule no_warmup{0, 10, 1e-3, 5e-6};
  EXPECT_NEAR(lr_at(no_warmup, 0), 1e-3, 1e-15);
}

// ---- regularisation -----------------------------------------------------------

TEST(DropPath, KeepRatioAndScaling) {
  const Tensor x = Tensor::full({10000, 1}, 1.0F);
  Rng rng(1);
  const auto y = drop_path(x, 0.25, rng, true);
  int kept = 0;
  for (float v : y.values()) {
    if (v != 0.0F) {
      ++kept;
      EXPECT_FLOAT_EQ(v, 1.0F / 0.75F);
    }
  }
  EXPECT_NEAR(kept / 10000.0, 0.75, 0.02);
  EXPECT_EQ(drop_path(x, 0.25, rng, false).values(), x.values());
  EXPECT_EQ(drop_path(x, 0.0, rng, true).values(), x.values());
}

TEST(DropPath, WholeSamplesDropTogether) {
  const Tensor x = Tensor::full({64, 2, 3, 3}, 1.0F);
  Rng rng(2);
  const auto y = drop_path(x, 0.5, rng, true);
  for (int n = 0; n < 64; ++n) {
    const float first = y.values()[static_cast<std::size_t>(n * 18)];
    for (int i = 1; i < 18; ++i) EXPECT_EQ(y.values()[static_cast<std::size_t>(n * 18 + i)], first);
  }
}

// ---- metrics and evaluation ---------------------------------------------------

TEST(TopK, CountsLabelsAmongHighestScores) {
  const std::vector<float> scores{0.1F, 0.5F, 0.4F, 0.7F, 0.2F, 0.1F};
  const std::vector<int> labels{2, 0};
  EXPECT_DOUBLE_EQ(topk_accuracy(scores, labels, 3, 1), 0.5);
  EXPECT_DOUBLE_EQ(topk_accuracy(scores, labels, 3, 2), 1.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(scores, labels, 3, 5), 1.0);  // k above class count
}

TEST(Evaluate, ProtocolGeometry) {
  EvalOptions o;
  o.num_clips = 4;
  o.seed = 3;
  std::set<std::vector<int>> distinct;
  for (int c = 0; c < 4; ++c) {
    const auto idx = eval_clip_indices(40, o, 0, c);
    ASSERT_EQ(idx.size(), 9U);
    for (std::size_t i = 1; i < idx.size(); ++i) EXPECT_EQ(idx[i] - idx[i - 1], 2);
    distinct.insert(idx);
  }
  EXPECT_GT(distinct.size(), 1U);
  o.num_clips = 1;
  EXPECT_EQ(eval_clip_indices(18, o, 0, 0).front(), 0);
  const auto crops = eval_crop_windows({64, 64}, 3);
  ASSERT_EQ(crops.size(), 3U);
  EXPECT_EQ(crops[0], (CropWindow{0, 0, 56, 56}));
  EXPECT_EQ(crops[2], (CropWindow{8, 8, 56, 56}));
  EXPECT_EQ(eval_crop_windows({64, 64}, 1)[0], (CropWindow{0, 0, 64, 64}));
}

TEST(Evaluate, FramePermutations) {
  const auto n = frame_permutation(9, FrameOrder::kNormal, 0, 0, 0);
  const auto r = frame_permutation(9, FrameOrder::kReverse, 0, 0, 0);
  const auto a = frame_permutation(9, FrameOrder::kRandom, 5, 1, 0);
  EXPECT_EQ(n, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(r, (std::vector<int>{8, 7, 6, 5, 4, 3, 2, 1, 0}));
  EXPECT_EQ(a, frame_permutation(9, FrameOrder::kRandom, 5, 1, 0));
  EXPECT_NE(a, frame_permutation(9, FrameOrder::kRandom, 5, 2, 0));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, n);
  EXPECT_THROW(parse_frame_order("sideways"), ConfigError);
}

TEST(Evaluate, MultiviewAveragingProperties) {
  const ModelConfig mc = small_model(Task::kMotionDirection);
  const VidConvModel model = build_model(mc, 1);
  // 17 frames, 9 at stride 2: every clip is the whole video, so all clip
  // views coincide and averaging them must change nothing.
  const Dataset ds = Dataset::generate(Task::kMotionDirection, 6, 2, kSmall, 17);
  EvalOptions o;
  o.input_size = kSmall;
  const EvalResult one = evaluate_multiview(model, ds, o);
  o.num_clips = 3;
  const EvalResult three = evaluate_multiview(model, ds, o);
  ASSERT_EQ(one.probs.size(), three.probs.size());
  for (std::size_t i = 0; i < one.probs.size(); ++i) EXPECT_NEAR(one.probs[i], three.probs[i], 1e-6);
  EXPECT_EQ(one.top1, three.top1);
  o.num_clips = 2;
  o.num_crops = 3;
  const EvalResult six = evaluate_multiview(model, ds, o);
  for (std::size_t v = 0; v < ds.size_videos(); ++v) {
    double row = 0.0;
    for (int k = 0; k < 8; ++k) row += six.probs[v * 8 + static_cast<std::size_t>(k)];
    EXPECT_NEAR(row, 1.0, 1e-5);
  }
  // 1x1 equals a direct forward on the centred clip.
  const auto video = ds.video(0);
  Rng unused(0);
  const Tensor clip = sample_clip(video, {9, 2, 2, 2, true}, unused);
  NoGradGuard guard;
  const Tensor logits = model.forward(clip, false);
  const auto p = softmax_rows<float>(logits.values(), 1, 8);
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(one.probs[static_cast<std::size_t>(k)], p[static_cast<std::size_t>(k)], 1e-6);
}

// ---- training loop ------------------------------------------------------------

TEST(Train, LossFallsWithinOneEpochOnMostSeeds) {
  int improved = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Dataset ds = Dataset::generate(Task::kAppearanceOnly, 8, seed, kSmall);
    VidConvModel model = build_model(small_model(Task::kAppearanceOnly), seed);
    TrainConfig tc = small_train(seed);
    tc.batch_size = 2;
    tc.lr_init = 4e-3;
    std::vector<double> losses;
    train(model, ds, nullptr, tc, [&](std::int64_t, double loss) { losses.push_back(loss); });
    ASSERT_EQ(losses.size(), 4U);
    improved += losses.back() < losses.front() ? 1 : 0;
  }
  EXPECT_GE(improved, 2);
}

TEST(Train, ZeroBackboneMultiplierFreezesBackbone) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 8, 4, kSmall);
  VidConvModel model = build_model(small_model(Task::kTemporalOrder), 4);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.parameters()) before.push_back(p.value.values());
  TrainConfig tc = small_train(4);
  tc.backbone_lr_mult = 0.0;
  train(model, ds, nullptr, tc);
  bool head_changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = model.parameters()[i];
    if (p.group == ParamGroup::kBackbone) {
      EXPECT_EQ(p.value.values(), before[i]) << p.name;
    } else {
      head_changed |= p.value.values() != before[i];
    }
  }
  EXPECT_TRUE(head_changed);
}

TEST(Train, SameSeedSameHistoryAndWeights) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 8, 5, kSmall);
  const Dataset val = Dataset::generate(Task::kTemporalOrder, 4, 6, kSmall);
  auto run = [&](int loaders) {
    VidConvModel model = build_model(small_model(Task::kTemporalOrder), 7);
    TrainConfig tc = small_train(8, 2);
    tc.loader_threads = loaders;
    auto h = train(model, ds, &val, tc);
    return std::pair{h, model};
  };
  const auto [h1, m1] = run(0);
  const auto [h2, m2] = run(0);
  const auto [h3, m3] = run(2);
  EXPECT_EQ(h1.records, h2.records);
  EXPECT_EQ(h1.records, h3.records);
  ASSERT_EQ(h1.records.size(), 4U);
  for (std::size_t i = 0; i < m1.parameters().size(); ++i) {
    EXPECT_EQ(m1.parameters()[i].value.values(), m2.parameters()[i].value.values());
    EXPECT_EQ(m1.parameters()[i].value.values(), m3.parameters()[i].value.values());
  }
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 8, 9, kSmall);
  const Dataset val = Dataset::generate(Task::kTemporalOrder, 4, 10, kSmall);
  const ModelConfig mc = small_model(Task::kTemporalOrder);

  VidConvModel straight = build_model(mc, 11);
  TrainConfig tc = small_train(12, 3);
  tc.checkpoint_dir = scratch("straight");
  const TrainHistory full = train(straight, ds, &val, tc);

  VidConvModel interrupted = build_model(mc, 11);
  tc.checkpoint_dir = scratch("resume");
  struct Stop {};
  EXPECT_THROW(train(interrupted, ds, &val, tc,
                     [](std::int64_t step, double) {
                       if (step == 3) throw Stop{};  // first step of the second epoch
                     }),
               Stop);
  VidConvModel resumed = build_model(mc, 99);  // weights come from the checkpoint
  tc.resume = true;
  const TrainHistory after = train(resumed, ds, &val, tc);
  EXPECT_EQ(after.records, full.records);
  for (std::size_t i = 0; i < straight.parameters().size(); ++i) {
    EXPECT_EQ(straight.parameters()[i].value.values(), resumed.parameters()[i].value.values())
        << straight.parameters()[i].name;
  }
  fs::remove_all(scratch("straight"));
  fs::remove_all(scratch("resume"));
}

TEST(Train, CheckpointsAndMetricsStream) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 8, 13, kSmall);
  const Dataset val = Dataset::generate(Task::kTemporalOrder, 4, 14, kSmall);
  VidConvModel model = build_model(small_model(Task::kTemporalOrder), 15);
  TrainConfig tc = small_train(16, 2);
  const auto dir = scratch("ckpt");
  tc.checkpoint_dir = dir / "ckpt";
  tc.metrics_path = dir / "metrics.jsonl";
  tc.checkpoint_every = 1;
  const TrainHistory h = train(model, ds, &val, tc);
  for (const char* stem : {"last", "best", "epoch_1", "epoch_2"}) {
    EXPECT_TRUE(fs::exists(tc.checkpoint_dir / (std::string(stem) + ".json"))) << stem;
    EXPECT_TRUE(fs::exists(tc.checkpoint_dir / (std::string(stem) + ".bin"))) << stem;
  }
  std::ifstream in(tc.metrics_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    for (const char* key : {"\"epoch\"", "\"split\"", "\"loss\"", "\"top1\"", "\"top5\"", "\"lr\""}) {
      EXPECT_NE(line.find(key), std::string::npos) << line;
    }
  }
  EXPECT_EQ(lines, 4);
  // The final weights round-trip bit-exactly through the last checkpoint.
  const VidConvModel loaded = load_model(tc.checkpoint_dir / "last");
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(model.parameters()[i].value.values(), loaded.parameters()[i].value.values());
  }
  EXPECT_EQ(h.records.size(), 4U);
  fs::remove_all(dir);
}

TEST(Train, DivergenceRaisesNumericalErrorAndDumpsState) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 8, 17, kSmall);
  VidConvModel model = build_model(small_model(Task::kTemporalOrder), 18);
  TrainConfig tc = small_train(19, 2);
  tc.lr_init = 1e38;
  tc.lr_min = 0.0;
  tc.checkpoint_dir = scratch("diverge");
  EXPECT_THROW(train(model, ds, nullptr, tc), NumericalError);
  EXPECT_TRUE(fs::exists(tc.checkpoint_dir / "diverged.json"));
  fs::remove_all(tc.checkpoint_dir);
}

TEST(Train, RejectsInconsistentSetups) {
  const Dataset ds = Dataset::generate(Task::kTemporalOrder, 4, 20, kSmall);
  VidConvModel wrong_classes = build_model(small_model(Task::kMotionDirection), 0);
  EXPECT_THROW(train(wrong_classes, ds, nullptr, small_train(0)), ConfigError);
  VidConvModel model = build_model(small_model(Task::kTemporalOrder), 0);
  TrainConfig tc = small_train(0);
  tc.sampler.frames_per_clip = 4;
  EXPECT_THROW(train(model, ds, nullptr, tc), ConfigError);
  tc = small_train(0);
  tc.resume = true;
  EXPECT_THROW(train(model, ds, nullptr, tc), ConfigError);
}

}  // namespace
}  // namespace vidconv

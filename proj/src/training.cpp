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

#include "vidconv/training.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "vidconv/checkpoint.hpp"

namespace vidconv {

OptimState make_optim_state(const std::vector<Parameter>& params, AdamWConfig hp,
                            double backbone_lr_mult) {
  if (hp.beta1 < 0 || hp.beta1 >= 1 || hp.beta2 < 0 || hp.beta2 >= 1 || hp.eps <= 0 ||
      hp.weight_decay < 0) {
    throw ConfigError("invalid AdamW hyper-parameters");
  }
  if (backbone_lr_mult < 0) throw ConfigError("backbone lr multiplier must be non-negative");
  OptimState s;
  s.hp = hp;
  s.lr_multipliers[ParamGroup::kBackbone] = backbone_lr_mult;
  for (const Parameter& p : params) {
    s.m.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0f);
    s.v.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0f);
  }
  return s;
}

void adamw_step(std::vector<Parameter>& params, OptimState& s, double lr_now) {
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("optimizer state does not match the parameter list");
  }
  ++s.step;
  const double b1 = s.hp.beta1, b2 = s.hp.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].value;
    auto& m = s.m[k];
    auto& v = s.v[k];
    if (std::ssize(m) != p.numel() || std::ssize(v) != p.numel()) {
      throw ShapeError("moment arrays of '" + params[k].name + "' do not match its shape");
    }
    const auto grad = p.grad();
    const bool has_grad = !grad.empty();
    const double lr = lr_now * s.lr_multipliers.at(params[k].group);
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in '" + params[k].name + "'");
      }
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      if (lr == 0.0) continue;
      const double pi = data[i];
      const double update = (mi / c1) / (std::sqrt(vi / c2) + s.hp.eps);
      data[i] = static_cast<float>(pi - lr * s.hp.weight_decay * pi - lr * update);
    }
  }
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : params) {
    for (const float g : p.value.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (Parameter& p : params) {
      if (!p.value.has_grad()) continue;
      for (float& g : p.value.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

double lr_at(const Schedule& s, std::int64_t iter) {
  if (iter < 0 || iter > s.total_iters) {
    throw ConfigError("iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(s.total_iters) + "]");
  }
  if (iter < s.warmup_iters) {
    return s.lr_init * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  }
  const std::int64_t span = s.total_iters - s.warmup_iters;
  const double progress =
      span > 0 ? static_cast<double>(iter - s.warmup_iters) / static_cast<double>(span) : 0.0;
  return s.lr_min + 0.5 * (s.lr_init - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string metrics_json_line(const EpochMetrics& m) {
  const nlohmann::json j{{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss},
                         {"top1", m.top1},   {"top5", m.top5},   {"lr", m.lr}};
  return j.dump();
}

const EpochMetrics* TrainHistory::last(const std::string& split) const {
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->split == split) return &*it;
  }
  return nullptr;
}

std::string frame_order_name(FrameOrder order) {
  switch (order) {
    case FrameOrder::kNormal: return "normal";
    case FrameOrder::kReverse: return "reverse";
    case FrameOrder::kRandom: return "random";
  }
  return "normal";
}

FrameOrder parse_frame_order(const std::string& name) {
  for (const FrameOrder o : {FrameOrder::kNormal, FrameOrder::kReverse, FrameOrder::kRandom}) {
    if (frame_order_name(o) == name) return o;
  }
  throw ConfigError("unknown frame order '" + name + "' (expected normal, reverse or random)");
}

double topk_accuracy(std::span<const float> scores, std::span<const int> labels,
                     std::int64_t classes, int k) {
  if (labels.empty()) return 0.0;
  std::int64_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = scores.data() + static_cast<std::int64_t>(r) * classes;
    const float target = row[labels[r]];
    std::int64_t above = 0;
    for (std::int64_t c = 0; c < classes; ++c) above += row[c] > target ? 1 : 0;
    hits += above < k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> eval_clip_indices(int num_frames, const EvalOptions& o, std::size_t video,
                                   int clip) {
  ClipSampler s;
  s.frames_per_clip = o.frames_per_clip;
  s.stride_min = o.stride;
  s.stride_max = o.stride;
  s.deterministic_stride = o.stride;
  s.centered = o.num_clips == 1;
  Rng rng(derive_seed(o.seed, "eval_clip",
                      video * static_cast<std::size_t>(o.num_clips) + static_cast<std::size_t>(clip)));
  return clip_indices(num_frames, s, rng);
}

std::vector<int> frame_permutation(int frames, FrameOrder order, std::uint64_t seed,
                                   std::size_t video, int clip) {
  std::vector<int> perm(static_cast<std::size_t>(frames));
  std::iota(perm.begin(), perm.end(), 0);
  if (order == FrameOrder::kReverse) {
    std::reverse(perm.begin(), perm.end());
  } else if (order == FrameOrder::kRandom) {
    Rng rng(derive_seed(seed, "order", video * 1024 + static_cast<std::size_t>(clip)));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  return perm;
}

std::vector<CropWindow> eval_crop_windows(Extent2 frame, int num_crops) {
  if (num_crops < 1) throw ConfigError("need at least one crop");
  if (num_crops == 1) return {CropWindow{0, 0, frame.h, frame.w}};
  // Square windows; on square frames they are shrunk so the views differ.
  std::int64_t side = std::min(frame.h, frame.w);
  if (frame.h == frame.w) side = std::max<std::int64_t>(1, std::llround(0.875 * static_cast<double>(side)));
  std::vector<CropWindow> out;
  for (int k = 0; k < num_crops; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(num_crops - 1);
    out.push_back({std::llround(f * static_cast<double>(frame.h - side)),
                   std::llround(f * static_cast<double>(frame.w - side)), side, side});
  }
  return out;
}

namespace {

Tensor concat_clips(const std::vector<Tensor>& clips) {
  Shape shape = clips.front().shape();
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(clips.front().numel()) * clips.size());
  for (const Tensor& c : clips) out.insert(out.end(), c.values().begin(), c.values().end());
  shape[0] *= static_cast<std::int64_t>(clips.size());
  return Tensor(std::move(shape), std::move(out));
}

struct Batch {
  Tensor clips;
  std::vector<int> labels;
};

Batch make_train_batch(const Dataset& data, std::span<const std::size_t> indices, int epoch,
                       const TrainConfig& cfg, Extent2 out) {
  std::vector<Tensor> clips;
  Batch b;
  for (const std::size_t i : indices) {
    const SyntheticVideo v = data.video(i);
    Rng rng(derive_seed(cfg.seed, "sample",
                        static_cast<std::uint64_t>(epoch) * data.size_videos() + i));
    Tensor clip = sample_clip(v, cfg.sampler, rng);
    clips.push_back(augment_clip(clip, rng, cfg.flip, cfg.crop_scales, out));
    b.labels.push_back(v.label);
  }
  b.clips = concat_clips(clips);
  return b;
}

// Bounded producer/consumer queue so batches can be prepared ahead.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Batch b) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(b));
    not_empty_.notify_one();
  }
  Batch pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty(); });
    Batch b = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return b;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<Batch> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

std::vector<NamedArray> train_arrays(const VidConvModel& model, const OptimState& s) {
  std::vector<NamedArray> arrays = model_arrays(model);
  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    arrays.push_back({"optim.m." + params[k].name, params[k].value.shape(), s.m[k]});
    arrays.push_back({"optim.v." + params[k].name, params[k].value.shape(), s.v[k]});
  }
  return arrays;
}

nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json records = nlohmann::json::array();
  for (const EpochMetrics& m : h.records) records.push_back(nlohmann::json::parse(metrics_json_line(m)));
  return {{"records", records}, {"best_val_top1", h.best_val_top1}, {"best_epoch", h.best_epoch}};
}

void save_train_state(const std::filesystem::path& stem, const VidConvModel& model,
                      const OptimState& s, const TrainHistory& h, int epoch,
                      const TrainConfig& cfg) {
  nlohmann::json meta;
  meta["model"] = config_to_json(model.config());
  meta["epoch"] = epoch;
  meta["step"] = s.step;
  meta["seed"] = cfg.seed;
  meta["history"] = history_json(h);
  write_arrays(stem, train_arrays(model, s), meta);
}

int restore_train_state(const std::filesystem::path& stem, VidConvModel& model, OptimState& s,
                        TrainHistory& h, const TrainConfig& cfg) {
  const ArrayFile file = read_arrays(stem);
  if (file.meta.at("model") != config_to_json(model.config())) {
    throw ConfigError("checkpoint " + stem.string() + " was written for a different model");
  }
  if (file.meta.at("seed").get<std::uint64_t>() != cfg.seed) {
    throw ConfigError("checkpoint " + stem.string() + " was written with a different seed");
  }
  restore_model(model, file);
  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const NamedArray* m = file.find("optim.m." + params[k].name);
    const NamedArray* v = file.find("optim.v." + params[k].name);
    if (m == nullptr || v == nullptr) throw ConfigError("checkpoint lacks optimizer state");
    s.m[k] = m->data;
    s.v[k] = v->data;
  }
  s.step = file.meta.at("step").get<std::int64_t>();
  const auto& hist = file.meta.at("history");
  h.records.clear();
  for (const auto& r : hist.at("records")) {
    h.records.push_back({r.at("epoch").get<int>(), r.at("split").get<std::string>(),
                         r.at("loss").get<double>(), r.at("top1").get<double>(),
                         r.at("top5").get<double>(), r.at("lr").get<double>()});
  }
  h.best_val_top1 = hist.at("best_val_top1").get<double>();
  h.best_epoch = hist.at("best_epoch").get<int>();
  return file.meta.at("epoch").get<int>();
}

}  // namespace

TrainHistory train(VidConvModel& model, const Dataset& train_set, const Dataset* val_set,
                   const TrainConfig& cfg, const StepCallback& on_step) {
  const ModelConfig& mc = model.config();
  if (train_set.size_videos() == 0) throw ConfigError("training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch size must be positive");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs > cfg.epochs) {
    throw ConfigError("warmup epochs must lie in [0, epochs]");
  }
  if (cfg.sampler.frames_per_clip != mc.frames) {
    throw ConfigError("clip length " + std::to_string(cfg.sampler.frames_per_clip) +
                      " differs from the model's " + std::to_string(mc.frames) + " frames");
  }
  if (train_set.num_classes() != mc.num_classes) {
    throw ConfigError("dataset has " + std::to_string(train_set.num_classes()) +
                      " classes, model has " + std::to_string(mc.num_classes));
  }
  if (cfg.resume && cfg.checkpoint_dir.empty()) throw ConfigError("resume needs a checkpoint dir");

  const auto n = train_set.size_videos();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const Schedule sched{cfg.warmup_epochs * steps_per_epoch, cfg.epochs * steps_per_epoch,
                       cfg.lr_init, cfg.lr_min};
  auto& params = model.parameters();
  OptimState state = make_optim_state(params, cfg.adamw, cfg.backbone_lr_mult);
  TrainHistory history;
  int start_epoch = 0;
  if (cfg.resume) {
    start_epoch = restore_train_state(cfg.checkpoint_dir / "last", model, state, history, cfg) + 1;
  }

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    if (cfg.metrics_path.has_parent_path()) {
      std::filesystem::create_directories(cfg.metrics_path.parent_path());
    }
    metrics.open(cfg.metrics_path, std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write metrics to " + cfg.metrics_path.string());
    for (const EpochMetrics& m : history.records) metrics << metrics_json_line(m) << '\n';
    metrics.flush();
  }
  auto emit = [&](const EpochMetrics& m) {
    history.records.push_back(m);
    if (metrics.is_open()) metrics << metrics_json_line(m) << '\n' << std::flush;
    if (cfg.verbose) std::cerr << metrics_json_line(m) << '\n';
  };

  EvalOptions eval;
  eval.num_clips = cfg.eval_clips;
  eval.num_crops = cfg.eval_crops;
  eval.frames_per_clip = mc.frames;
  eval.stride = cfg.sampler.deterministic_stride.value_or(cfg.sampler.stride_min);
  eval.input_size = mc.input_size;
  eval.seed = derive_seed(cfg.seed, "eval");
  eval.batch_size = cfg.batch_size;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    auto batch_at = [&](std::int64_t b) {
      const std::size_t lo = static_cast<std::size_t>(b) * bs;
      const std::size_t hi = std::min(n, lo + bs);
      return make_train_batch(train_set, std::span(order).subspan(lo, hi - lo), epoch, cfg,
                              mc.input_size);
    };

    BatchQueue queue(2);
    std::vector<std::jthread> loaders;
    const int workers = std::max(0, cfg.loader_threads);
    // Workers build disjoint batches; a turn counter keeps queue order.
    std::int64_t turn = 0;
    std::mutex turn_mu;
    std::condition_variable_any turn_cv;
    for (int w = 0; w < workers; ++w) {
      loaders.emplace_back([&, w](std::stop_token stop) {
        for (std::int64_t b = w; b < steps_per_epoch && !stop.stop_requested(); b += workers) {
          Batch batch = batch_at(b);
          {
            std::unique_lock lock(turn_mu);
            if (!turn_cv.wait(lock, stop, [&] { return turn == b; })) return;
          }
          queue.push(std::move(batch));
          std::lock_guard lock(turn_mu);
          ++turn;
          turn_cv.notify_all();
        }
      });
    }
    struct StopLoaders {
      BatchQueue& q;
      std::vector<std::jthread>& threads;
      ~StopLoaders() {
        for (auto& t : threads) t.request_stop();
        q.close();
        threads.clear();
      }
    } stopper{queue, loaders};

    double loss_sum = 0.0, top1_sum = 0.0, top5_sum = 0.0, lr = 0.0;
    std::size_t seen = 0;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      Batch batch = workers > 0 ? queue.pop() : batch_at(b);
      lr = lr_at(sched, state.step + 1);
      try {
        Rng drop(derive_seed(cfg.seed, "drop", static_cast<std::uint64_t>(state.step)));
        const Tensor logits = model.forward(batch.clips, true, &drop);
        CrossEntropy<float> ce = softmax_cross_entropy(logits, batch.labels);
        const double loss = ce.loss.item();
        ce.loss.backward();
        clip_grad_norm(params, cfg.clip_norm);
        adamw_step(params, state, lr);
        for (Parameter& p : params) p.value.zero_grad();
        const auto rows = batch.labels.size();
        loss_sum += loss * static_cast<double>(rows);
        top1_sum += topk_accuracy(ce.probs.values(), batch.labels, mc.num_classes, 1) * static_cast<double>(rows);
        top5_sum += topk_accuracy(ce.probs.values(), batch.labels, mc.num_classes, 5) * static_cast<double>(rows);
        seen += rows;
        if (on_step) on_step(state.step, loss);
      } catch (const NumericalError& e) {
        if (!cfg.checkpoint_dir.empty()) {
          save_train_state(cfg.checkpoint_dir / "diverged", model, state, history, epoch, cfg);
        }
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(state.step) + ": " + e.what());
      }
    }
    const double denom = static_cast<double>(std::max<std::size_t>(seen, 1));
    emit({epoch, "train", loss_sum / denom, top1_sum / denom, top5_sum / denom, lr});

    bool best = false;
    if (val_set != nullptr) {
      const EvalResult r = evaluate_multiview(model, *val_set, eval);
      emit({epoch, "val", r.loss, r.top1, r.top5, lr});
      if (r.top1 > history.best_val_top1) {
        history.best_val_top1 = r.top1;
        history.best_epoch = epoch;
        best = true;
      }
    }
    if (!cfg.checkpoint_dir.empty()) {
      save_train_state(cfg.checkpoint_dir / "last", model, state, history, epoch, cfg);
      if (best) save_model(cfg.checkpoint_dir / "best", model, {{"epoch", epoch}});
      if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
        save_model(cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1)), model,
                   {{"epoch", epoch}});
      }
    }
  }
  return history;
}

EvalResult evaluate_multiview(const VidConvModel& model, const Dataset& dataset,
                              const EvalOptions& o) {
  if (o.num_clips < 1 || o.num_crops < 1) throw ConfigError("views must be at least 1x1");
  if (o.frames_per_clip != model.config().frames) {
    throw ConfigError("evaluation clip length differs from the model's frame count");
  }
  if (dataset.num_classes() != model.config().num_classes) {
    throw ConfigError("dataset and model disagree on the number of classes");
  }
  NoGradGuard no_grad;
  const std::int64_t k = model.config().num_classes;
  const std::size_t n = dataset.size_videos();
  const auto windows = eval_crop_windows(dataset.size(), o.num_crops);
  const auto views = static_cast<float>(o.num_clips * o.num_crops);
  EvalResult r;
  r.probs.assign(n * static_cast<std::size_t>(k), 0.0f);
  r.labels.resize(n);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, o.batch_size));
  for (std::size_t lo = 0; lo < n; lo += bs) {
    const std::size_t hi = std::min(n, lo + bs);
    const auto videos = dataset.render(lo, hi);
    for (int c = 0; c < o.num_clips; ++c) {
      std::vector<Tensor> base;
      for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto idx = eval_clip_indices(static_cast<int>(videos[i].frames.dim(0)), o, lo + i, c);
        const auto perm = frame_permutation(o.frames_per_clip, o.order, o.seed, lo + i, c);
        std::vector<int> ordered(idx.size());
        for (std::size_t t = 0; t < idx.size(); ++t) ordered[t] = idx[static_cast<std::size_t>(perm[t])];
        base.push_back(gather_frames(videos[i].frames, ordered));
        r.labels[lo + i] = videos[i].label;
      }
      for (const CropWindow& w : windows) {
        std::vector<Tensor> clips;
        for (const Tensor& t : base) clips.push_back(apply_augment(t, {false, w}, o.input_size));
        const Tensor logits = model.forward(concat_clips(clips), false);
        const auto p = softmax_rows<float>(logits.values(), logits.dim(0), k);
        for (std::size_t i = 0; i < videos.size(); ++i) {
          for (std::int64_t j = 0; j < k; ++j) {
            r.probs[(lo + i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] +=
                p[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] / views;
          }
        }
      }
    }
  }
  r.top1 = topk_accuracy(r.probs, r.labels, k, 1);
  r.top5 = topk_accuracy(r.probs, r.labels, k, 5);
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    nll -= std::log(std::max(1e-12, static_cast<double>(
                                        r.probs[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(r.labels[i])])));
  }
  r.loss = nll / static_cast<double>(n);
  return r;
}

}  // namespace vidconv

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

#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace vidconv::cli {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(trim(item));
  return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

bool parse_real(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
    return true;
  }
  return false;
}

bool valid(ValueType type, const std::string& v) {
  std::int64_t i;
  double d;
  bool b;
  switch (type) {
    case ValueType::kInt: return parse_int(v, i);
    case ValueType::kReal: return parse_real(v, d);
    case ValueType::kBool: return parse_bool(v, b);
    case ValueType::kString: return true;
    case ValueType::kIntList:
      if (v.empty()) return true;
      for (const auto& p : split(v, ',')) {
        if (!parse_int(p, i)) return false;
      }
      return true;
    case ValueType::kRealList:
      if (v.empty()) return true;
      for (const auto& p : split(v, ',')) {
        if (!parse_real(p, d)) return false;
      }
      return true;
    case ValueType::kExtent: {
      if (v.empty()) return true;
      const auto parts = split(v, 'x');
      return parts.size() == 2 && parse_int(parts[0], i) && parse_int(parts[1], i);
    }
  }
  return false;
}

const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::kInt: return "integer";
    case ValueType::kReal: return "real";
    case ValueType::kBool: return "boolean";
    case ValueType::kString: return "string";
    case ValueType::kIntList: return "comma-separated integers";
    case ValueType::kRealList: return "comma-separated reals";
    case ValueType::kExtent: return "HxW";
  }
  return "value";
}

}  // namespace

RunConfig::RunConfig() {
  using T = ValueType;
  declare("run.seed", T::kInt, "0", "root seed; data, init, training and eval seeds derive from it");

  declare("data.task", T::kString, "temporal-order",
          "appearance-only, motion-direction or temporal-order");
  declare("data.size", T::kExtent, "64x64", "rendered frame size");
  declare("data.num_frames", T::kInt, "18", "frames per rendered video");
  declare("data.train_videos", T::kInt, "2000", "training videos");
  declare("data.val_videos", T::kInt, "500", "validation videos");
  declare("data.threads", T::kInt, "1", "rendering threads (output is identical for any count)");

  declare("model.variant", T::kString, "toy", "toy, tiny, small, base or custom");
  declare("model.channels", T::kIntList, "", "stage widths; empty keeps the variant's");
  declare("model.blocks", T::kIntList, "", "blocks per stage; empty keeps the variant's");
  declare("model.grid", T::kExtent, "3x3", "collage grid h x w");
  declare("model.frames", T::kInt, "9", "frames per clip; equals grid cells when stacking");
  declare("model.stacking_stage", T::kInt, "2", "stage after which frames are collaged (1..4)");
  declare("model.spatial_stacking", T::kBool, "true", "collage frames after the stacking stage");
  declare("model.temporal_branch", T::kBool, "true", "temporal dilated conv in later blocks");
  declare("model.neck", T::kBool, "true", "temporal neck before pooling");
  declare("model.temporal_bias", T::kBool, "true", "bias on the temporal conv");
  declare("model.head_width", T::kInt, "0", "neck width; 0 keeps the variant's");
  declare("model.num_classes", T::kInt, "0",
          "classifier size; 0 means 400 for tiny/small/base and the task's classes otherwise");
  declare("model.drop_path", T::kReal, "0.1", "final stochastic depth rate");
  declare("model.head_dropout", T::kReal, "0", "dropout before the classifier");
  declare("model.layer_scale_init", T::kReal, "1e-6", "initial layer scale");
  declare("model.input", T::kExtent, "", "network input; empty means 224x224, or 64x64 for toy");

  declare("train.epochs", T::kInt, "20", "training epochs");
  declare("train.batch", T::kInt, "16", "clips per step");
  declare("train.lr", T::kReal, "1e-3", "peak learning rate");
  declare("train.lr_min", T::kReal, "5e-6", "final learning rate");
  declare("train.warmup_epochs", T::kInt, "1", "linear warm-up epochs");
  declare("train.weight_decay", T::kReal, "0.05", "decoupled weight decay");
  declare("train.beta1", T::kReal, "0.9", "AdamW beta1");
  declare("train.beta2", T::kReal, "0.999", "AdamW beta2");
  declare("train.eps", T::kReal, "1e-8", "AdamW epsilon");
  declare("train.backbone_lr_mult", T::kReal, "1.0", "learning-rate factor of the backbone");
  declare("train.clip_norm", T::kReal, "5.0", "global gradient-norm clip; 0 disables");
  declare("train.stride_min", T::kInt, "2", "smallest temporal stride");
  declare("train.stride_max", T::kInt, "2", "largest temporal stride");
  declare("train.flip", T::kBool, "true",
          "random left-right flip; always off for motion-direction, where it changes the label");
  declare("train.crop_scales", T::kRealList, "1.0,0.875,0.75", "multi-scale crop sizes");
  declare("train.checkpoint_every", T::kInt, "0", "extra checkpoint every K epochs; 0 disables");
  declare("train.loader_threads", T::kInt, "0", "batch preparation threads; 0 is single-threaded");
  declare("train.resume", T::kBool, "false", "continue from paths.checkpoints/last");
  declare("train.verbose", T::kBool, "false", "echo metric records to stderr");

  declare("eval.views", T::kString, "1x1", "clips x crops averaged per video");
  declare("eval.order", T::kString, "normal", "frame order: normal, reverse or random");
  declare("eval.clip_index", T::kInt, "0", "validation video used by analyze cam");

  declare("analyze.suite", T::kString, "temporal_branch",
          "ablation suite: temporal_branch, grid_resolution or stacking_stage");
  declare("analyze.frames", T::kInt, "0", "frames for flops; 0 uses model.frames");

  declare("bench.views", T::kInt, "1", "views per timed forward");
  declare("bench.warmup", T::kInt, "1", "untimed warm-up runs");
  declare("bench.runs", T::kInt, "5", "timed runs");

  declare("paths.dataset", T::kString, "data", "dataset directory (train.json, val.json)");
  declare("paths.checkpoints", T::kString, "runs/checkpoints", "checkpoint directory");
  declare("paths.checkpoint", T::kString, "", "checkpoint stem to evaluate; empty uses <checkpoints>/best");
  declare("paths.metrics", T::kString, "runs/metrics.jsonl", "metrics stream");
  declare("paths.output", T::kString, "runs/analysis", "analysis outputs");
}

void RunConfig::declare(const std::string& key, ValueType type, std::string value,
                        std::string doc) {
  entries_[key] = {type, std::move(value), std::move(doc)};
  order_.push_back(key);
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  const std::string v = trim(value);
  if (!valid(it->second.type, v)) {
    throw ConfigError("config key '" + key + "' expects " + type_name(it->second.type) +
                      ", got '" + v + "'");
  }
  it->second.value = v;
}

const std::string& RunConfig::raw(const std::string& key) const { return entry(key).value; }

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_int(entry(key).value, v)) throw ConfigError("'" + key + "' is not an integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0;
  if (!parse_real(entry(key).value, v)) throw ConfigError("'" + key + "' is not a real");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  if (!parse_bool(entry(key).value, v)) throw ConfigError("'" + key + "' is not a boolean");
  return v;
}

std::string RunConfig::get_string(const std::string& key) const { return entry(key).value; }

std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  const std::string& v = entry(key).value;
  if (v.empty()) return out;
  for (const auto& p : split(v, ',')) {
    std::int64_t i = 0;
    parse_int(p, i);
    out.push_back(i);
  }
  return out;
}

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
  std::vector<double> out;
  const std::string& v = entry(key).value;
  if (v.empty()) return out;
  for (const auto& p : split(v, ',')) {
    double d = 0;
    parse_real(p, d);
    out.push_back(d);
  }
  return out;
}

Extent2 RunConfig::get_extent(const std::string& key) const {
  const std::string& v = entry(key).value;
  if (v.empty()) return {0, 0};
  const auto parts = split(v, 'x');
  Extent2 e;
  parse_int(parts[0], e.h);
  parse_int(parts[1], e.w);
  return e;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  load_text(ss.str(), path.string());
}

std::string RunConfig::dump(bool with_docs) const {
  std::ostringstream os;
  std::string section;
  for (const std::string& key : order_) {
    const std::string s = key.substr(0, key.find('.'));
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << "# [" << s << "]\n";
      section = s;
    }
    const Entry& e = entries_.at(key);
    if (with_docs) os << "# " << e.doc << '\n';
    os << key << " = " << e.value << '\n';
  }
  return os.str();
}

std::vector<std::string> RunConfig::keys() const { return order_; }

std::uint64_t root_seed(const RunConfig& c) {
  const std::int64_t s = c.get_int("run.seed");
  if (s < 0) throw ConfigError("run.seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

Task task_of(const RunConfig& c) { return parse_task(c.get_string("data.task")); }

ModelConfig model_config(const RunConfig& c) {
  const std::string name = c.get_string("model.variant");
  const bool toy = name == "toy" || name == "custom";
  ModelConfig m = toy ? ModelConfig::toy() : ModelConfig::for_variant(parse_variant(name));
  auto stages = [](const std::vector<std::int64_t>& v, const char* what) {
    if (v.size() != kNumStages) throw ConfigError(std::string(what) + " needs 4 entries");
    std::array<int, kNumStages> a{};
    for (int i = 0; i < kNumStages; ++i) a[static_cast<std::size_t>(i)] = static_cast<int>(v[static_cast<std::size_t>(i)]);
    return a;
  };
  const auto ch = c.get_int_list("model.channels");
  const auto bl = c.get_int_list("model.blocks");
  if (!ch.empty() || !bl.empty()) m.variant = Variant::kCustom;
  if (!ch.empty()) m.channels = stages(ch, "model.channels");
  if (!bl.empty()) m.blocks = stages(bl, "model.blocks");
  const Extent2 g = c.get_extent("model.grid");
  if (g.h <= 0 || g.w <= 0) throw ConfigError("model.grid must be positive");
  m.grid = {static_cast<int>(g.h), static_cast<int>(g.w)};
  m.frames = static_cast<int>(c.get_int("model.frames"));
  m.stacking_stage = static_cast<int>(c.get_int("model.stacking_stage"));
  m.spatial_stacking = c.get_bool("model.spatial_stacking");
  m.use_temporal_branch = c.get_bool("model.temporal_branch");
  m.use_neck = c.get_bool("model.neck");
  m.temporal_bias = c.get_bool("model.temporal_bias");
  if (const auto hw = c.get_int("model.head_width"); hw > 0) m.head_width = static_cast<int>(hw);
  m.drop_path_rate = c.get_real("model.drop_path");
  m.head_dropout = c.get_real("model.head_dropout");
  m.layer_scale_init = c.get_real("model.layer_scale_init");
  const Extent2 in = c.get_extent("model.input");
  if (in.h > 0) {
    m.input_size = in;
  } else {
    m.input_size = toy ? Extent2{64, 64} : Extent2{224, 224};
  }
  const auto classes = c.get_int("model.num_classes");
  if (classes > 0) {
    m.num_classes = static_cast<int>(classes);
  } else if (toy) {
    m.num_classes = task_num_classes(task_of(c));
  }
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = static_cast<int>(c.get_int("train.epochs"));
  t.batch_size = static_cast<int>(c.get_int("train.batch"));
  t.lr_init = c.get_real("train.lr");
  t.lr_min = c.get_real("train.lr_min");
  t.warmup_epochs = static_cast<int>(c.get_int("train.warmup_epochs"));
  t.adamw = {c.get_real("train.weight_decay"), c.get_real("train.beta1"),
             c.get_real("train.beta2"), c.get_real("train.eps")};
  t.backbone_lr_mult = c.get_real("train.backbone_lr_mult");
  t.clip_norm = c.get_real("train.clip_norm");
  t.seed = derive_seed(root_seed(c), "train");
  t.sampler.frames_per_clip = static_cast<int>(c.get_int("model.frames"));
  t.sampler.stride_min = static_cast<int>(c.get_int("train.stride_min"));
  t.sampler.stride_max = static_cast<int>(c.get_int("train.stride_max"));
  t.flip = c.get_bool("train.flip") && task_of(c) != Task::kMotionDirection;
  t.crop_scales = c.get_real_list("train.crop_scales");
  const auto [clips, crops] = parse_views(c.get_string("eval.views"));
  t.eval_clips = clips;
  t.eval_crops = crops;
  t.checkpoint_every = static_cast<int>(c.get_int("train.checkpoint_every"));
  t.checkpoint_dir = c.get_string("paths.checkpoints");
  t.metrics_path = c.get_string("paths.metrics");
  t.resume = c.get_bool("train.resume");
  t.loader_threads = static_cast<int>(c.get_int("train.loader_threads"));
  t.verbose = c.get_bool("train.verbose");
  if (t.lr_min < 0 || t.lr_init < t.lr_min) throw ConfigError("need 0 <= train.lr_min <= train.lr");
  return t;
}

EvalOptions eval_options(const RunConfig& c, const ModelConfig& model) {
  const TrainConfig t = train_config(c);
  EvalOptions o;
  o.num_clips = t.eval_clips;
  o.num_crops = t.eval_crops;
  o.frames_per_clip = model.frames;
  o.stride = t.sampler.stride_min;
  o.input_size = model.input_size;
  o.order = parse_frame_order(c.get_string("eval.order"));
  // Same derivation as the training loop, so a saved model re-evaluates
  // to the logged validation metric.
  o.seed = derive_seed(t.seed, "eval");
  o.batch_size = t.batch_size;
  return o;
}

std::pair<int, int> parse_views(const std::string& text) {
  const auto parts = split(text, 'x');
  std::int64_t a = 0, b = 0;
  if (parts.size() != 2 || !parse_int(parts[0], a) || !parse_int(parts[1], b) || a < 1 || b < 1) {
    throw ConfigError("views must look like CLIPSxCROPS, e.g. 4x1; got '" + text + "'");
  }
  return {static_cast<int>(a), static_cast<int>(b)};
}

}  // namespace vidconv::cli

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

#include "commands.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "run_config.hpp"
#include "vidconv/analysis.hpp"
#include "vidconv/checkpoint.hpp"

namespace vidconv::cli {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string command;
  std::string analyze_mode;
  RunConfig config;
  bool force = false;
  bool dry_run = false;
};

fs::path dataset_dir(const RunConfig& c) { return c.get_string("paths.dataset"); }

Dataset load_split(const RunConfig& c, const char* split) {
  const fs::path manifest = dataset_dir(c) / (std::string(split) + ".json");
  if (!fs::exists(manifest)) {
    throw ConfigError("dataset manifest " + manifest.string() + " not found; run gen-data first");
  }
  Dataset d = Dataset::load(manifest);
  if (d.task() != task_of(c)) {
    throw ConfigError("dataset in " + dataset_dir(c).string() + " is " + task_name(d.task()) +
                      ", config asks for " + task_name(task_of(c)));
  }
  return d;
}

fs::path checkpoint_stem(const RunConfig& c) {
  const std::string explicit_stem = c.get_string("paths.checkpoint");
  if (!explicit_stem.empty()) return explicit_stem;
  return fs::path(c.get_string("paths.checkpoints")) / "best";
}

VidConvModel load_configured_model(const RunConfig& c) {
  VidConvModel model(model_config(c), 0);
  restore_model(model, read_arrays(checkpoint_stem(c)));
  return model;
}

void echo_config(const Invocation& inv, std::ostream& out) {
  out << "# resolved config for '" << inv.command << "'\n" << inv.config.dump() << "# end config\n";
}

int cmd_gen_data(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const fs::path dir = dataset_dir(c);
  if (fs::exists(dir / "train.json") && !inv.force) {
    throw ConfigError("dataset " + dir.string() + " already exists; pass --force to regenerate");
  }
  const Task task = task_of(c);
  const Extent2 size = c.get_extent("data.size");
  const int frames = static_cast<int>(c.get_int("data.num_frames"));
  const int threads = static_cast<int>(c.get_int("data.threads"));
  const auto n_train = c.get_int("data.train_videos");
  const auto n_val = c.get_int("data.val_videos");
  if (n_train < 1 || n_val < 1) throw ConfigError("video counts must be at least 1");
  const std::uint64_t seed = root_seed(c);
  const Dataset train = Dataset::generate(task, static_cast<int>(n_train), derive_seed(seed, "data"),
                                          size, frames, threads);
  const Dataset val = Dataset::generate(task, static_cast<int>(n_val), derive_seed(seed, "data-val"),
                                        size, frames, threads);
  train.save(dir / "train.json");
  val.save(dir / "val.json");
  std::ofstream(dir / "config.txt") << c.dump();
  for (const auto& [name, d] : {std::pair<const char*, const Dataset*>{"train", &train}, {"val", &val}}) {
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (const VideoRecord& r : d->videos()) digest = fnv1a64(&r.checksum, sizeof(r.checksum), digest);
    out << nlohmann::json{{"split", name},
                          {"task", task_name(task)},
                          {"videos", d->size_videos()},
                          {"manifest", (dir / (std::string(name) + ".json")).string()},
                          {"digest", digest}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

int cmd_train(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const ModelConfig mc = model_config(c);
  const TrainConfig tc = train_config(c);
  if (inv.dry_run) {
    out << format_cost_table(count_params(mc));
    return kExitOk;
  }
  const Dataset train_set = load_split(c, "train");
  const Dataset val_set = load_split(c, "val");
  VidConvModel model(mc, derive_seed(root_seed(c), "init"));
  const TrainHistory h = train(model, train_set, &val_set, tc);
  const EpochMetrics* last = h.last("val");
  out << nlohmann::json{{"split", "final"},
                        {"epochs", tc.epochs},
                        {"val_top1", last ? last->top1 : 0.0},
                        {"val_top5", last ? last->top5 : 0.0},
                        {"best_val_top1", h.best_val_top1},
                        {"best_epoch", h.best_epoch},
                        {"checkpoints", tc.checkpoint_dir.string()},
                        {"metrics", tc.metrics_path.string()}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_eval(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const VidConvModel model = load_configured_model(c);
  const Dataset val = load_split(c, "val");
  const EvalOptions o = eval_options(c, model.config());
  out << "# " << o.num_clips * o.num_crops << " forward passes per video ("
      << o.num_clips << " clips x " << o.num_crops << " crops)\n";
  const EvalResult r = evaluate_multiview(model, val, o);
  out << nlohmann::json{{"split", "eval"},
                        {"checkpoint", checkpoint_stem(c).string()},
                        {"views", c.get_string("eval.views")},
                        {"order", frame_order_name(o.order)},
                        {"loss", r.loss},
                        {"top1", r.top1},
                        {"top5", r.top5}}
             .dump()
      << '\n';
  return kExitOk;
}

int analyze_cost(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const ModelConfig mc = model_config(c);
  const auto frames = c.get_int("analyze.frames");
  const CostReport r = count_flops(mc, frames > 0 ? static_cast<int>(frames) : mc.frames, mc.input_size);
  out << format_cost_table(r) << cost_report_json(r) << '\n';
  return kExitOk;
}

int analyze_cam(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const VidConvModel model = load_configured_model(c);
  const Dataset val = load_split(c, "val");
  const auto index = c.get_int("eval.clip_index");
  if (index < 0 || static_cast<std::size_t>(index) >= val.size_videos()) {
    throw ConfigError("eval.clip_index " + std::to_string(index) + " outside the validation set");
  }
  const SyntheticVideo video = val.video(static_cast<std::size_t>(index));
  EvalOptions o = eval_options(c, model.config());
  o.num_clips = 1;
  const auto idx = eval_clip_indices(static_cast<int>(video.frames.dim(0)), o, 0, 0);
  const Extent2 in = model.config().input_size;
  const Tensor clip = apply_augment(gather_frames(video.frames, idx),
                                    {false, {0, 0, val.size().h, val.size().w}}, in);
  const CamResult cam = compute_cam(model, clip, video.label);
  const fs::path dir = fs::path(c.get_string("paths.output")) / "cam";
  fs::create_directories(dir);
  const std::int64_t plane = cam.height * cam.width;
  std::vector<NamedArray> raw;
  for (int t = 0; t < cam.frames; ++t) {
    const std::span<const float> map(cam.heatmaps.data() + t * plane, static_cast<std::size_t>(plane));
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02d.pgm", t);
    write_pgm(dir / name, resize_map(map, cam.height, cam.width, in.h, in.w), in.h, in.w);
  }
  raw.push_back({"heatmaps", {cam.frames, cam.height, cam.width}, cam.heatmaps});
  raw.push_back({"raw", {cam.frames, cam.height, cam.width}, cam.raw});
  write_arrays(dir / "cam", raw,
               {{"video", index}, {"label", video.label}, {"frames", idx}, {"task", task_name(val.task())}});
  out << nlohmann::json{{"cam", dir.string()}, {"frames", cam.frames}, {"class", video.label},
                        {"map", {cam.height, cam.width}}}
             .dump()
      << '\n';
  return kExitOk;
}

int analyze_shuffle(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const VidConvModel model = load_configured_model(c);
  const Dataset val = load_split(c, "val");
  const EvalOptions o = eval_options(c, model.config());
  const std::vector<FrameOrder> orders{FrameOrder::kNormal, FrameOrder::kReverse, FrameOrder::kRandom};
  const ShuffleReport r = shuffle_eval(model, val, orders, o.seed, o);
  const fs::path dir = c.get_string("paths.output");
  fs::create_directories(dir);
  std::ofstream lines(dir / "shuffle.jsonl");
  char row[128];
  out << "order      top1    top5\n";
  for (const OrderAccuracy& a : r.results) {
    std::snprintf(row, sizeof(row), "%-8s %6.2f  %6.2f\n", frame_order_name(a.order).c_str(),
                  100.0 * a.top1, 100.0 * a.top5);
    out << row;
    lines << nlohmann::json{{"task", task_name(r.task)}, {"order", frame_order_name(a.order)},
                            {"top1", a.top1}, {"top5", a.top5}}
                 .dump()
          << '\n';
  }
  return kExitOk;
}

int analyze_ablation(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const AblationSuite suite = parse_ablation_suite(c.get_string("analyze.suite"));
  const Dataset train_set = load_split(c, "train");
  const Dataset val_set = load_split(c, "val");
  TrainConfig tc = train_config(c);
  const AblationTable t = run_ablation(suite, model_config(c), train_set, val_set, tc);
  const fs::path dir = c.get_string("paths.output");
  fs::create_directories(dir);
  const std::string stem = "ablation_" + ablation_suite_name(suite);
  std::ofstream(dir / (stem + ".txt")) << format_ablation_table(t);
  std::ofstream lines(dir / (stem + ".jsonl"));
  for (const std::string& l : ablation_json_lines(t)) lines << l << '\n';
  out << format_ablation_table(t);
  return kExitOk;
}

int cmd_bench(const Invocation& inv, std::ostream& out) {
  const RunConfig& c = inv.config;
  const LatencyReport r = benchmark_latency(model_config(c), static_cast<int>(c.get_int("bench.views")),
                                            static_cast<int>(c.get_int("bench.warmup")),
                                            static_cast<int>(c.get_int("bench.runs")));
  out << nlohmann::json{{"views", r.views},         {"runs", r.timed_runs},
                        {"mean_ms", r.mean_ms},     {"median_ms", r.median_ms},
                        {"per_view_ms", r.per_view_ms}, {"hardware", r.hardware}}
             .dump()
      << '\n';
  return kExitOk;
}

int dispatch(const Invocation& inv, std::ostream& out) {
  echo_config(inv, out);
  if (inv.command == "gen-data") return cmd_gen_data(inv, out);
  if (inv.command == "train") return cmd_train(inv, out);
  if (inv.command == "eval") return cmd_eval(inv, out);
  if (inv.command == "bench") return cmd_bench(inv, out);
  if (inv.analyze_mode == "params" || inv.analyze_mode == "flops") return analyze_cost(inv, out);
  if (inv.analyze_mode == "cam") return analyze_cam(inv, out);
  if (inv.analyze_mode == "shuffle") return analyze_shuffle(inv, out);
  if (inv.analyze_mode == "ablation") return analyze_ablation(inv, out);
  throw ConfigError("unknown analyze mode '" + inv.analyze_mode + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"VidConv video backbone: data generation, training, evaluation and analysis"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  Invocation inv;

  // Long flags that are shorthands for config keys.
  const std::vector<std::pair<std::string, std::string>> shorthands{
      {"--task", "data.task"},          {"--videos", "data.train_videos"},
      {"--seed", "run.seed"},           {"--variant", "model.variant"},
      {"--frames", "model.frames"},     {"--grid", "model.grid"},
      {"--views", "eval.views"},        {"--order", "eval.order"},
      {"--checkpoint", "paths.checkpoint"}, {"--clip-index", "eval.clip_index"},
      {"--suite", "analyze.suite"},     {"--epochs", "train.epochs"},
      {"--dataset", "paths.dataset"},   {"--checkpoints", "paths.checkpoints"},
      {"--metrics", "paths.metrics"},   {"--out", "paths.output"},
  };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "config file of 'section.key = value' lines");
    sub->add_option("--set", sets, "override one key, KEY=VALUE (repeatable)");
    for (const auto& [flag, key] : shorthands) {
      sub->add_option_function<std::string>(
          flag, [&flags, key = key](const std::string& v) { flags[key] = v; }, "sets " + key);
    }
  };
  CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic dataset and write its manifests");
  add_common(gen);
  gen->add_flag("--force", inv.force, "overwrite an existing dataset");
  CLI::App* tr = app.add_subcommand("train", "train a model and write checkpoints and metrics");
  add_common(tr);
  tr->add_flag_function("--resume", [&](std::int64_t) { flags["train.resume"] = "true"; },
                        "continue from the last checkpoint");
  tr->add_flag("--dry-run", inv.dry_run, "print the resolved config and cost report only");
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(ev);
  CLI::App* an = app.add_subcommand("analyze", "cost reports, CAM, frame-shuffle evaluation, ablations");
  add_common(an);
  an->add_option("mode", inv.analyze_mode, "params, flops, cam, shuffle or ablation")
      ->required()
      ->check(CLI::IsMember({"params", "flops", "cam", "shuffle", "ablation"}));
  CLI::App* be = app.add_subcommand("bench", "forward latency of a configured model");
  add_common(be);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (const CLI::App* sub : app.get_subcommands()) inv.command = sub->get_name();

  try {
    if (!config_file.empty()) inv.config.load_file(config_file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      inv.config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : flags) inv.config.set(key, value);
    return dispatch(inv, out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace vidconv::cli

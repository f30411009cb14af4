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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "run_config.hpp"
#include "vidconv/data.hpp"

namespace vidconv::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "vidconv");
  std::ostringstream out, err;
  Outcome o;
  o.code = run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> v;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.front() == '{') v.push_back(json::parse(line));
  }
  return v;
}

std::string echoed_config(const std::string& text) {
  const auto begin = text.find('\n', text.find("# resolved config")) + 1;
  const auto end = text.find("# end config");
  return text.substr(begin, end - begin);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("vidconv_cli_" + std::string(info->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::vector<std::string> paths() const {
    return {"--dataset",     (root_ / "data").string(), "--checkpoints", (root_ / "ckpt").string(),
            "--metrics",     (root_ / "metrics.jsonl").string(), "--out", (root_ / "out").string()};
  }
  // Small frames, few videos, toy model.
  std::vector<std::string> small(std::vector<std::string> args) const {
    for (const std::string& s :
         {"--set", "data.size=32x32", "--set", "model.input=32x32", "--set", "data.val_videos=6",
          "--videos", "8", "--epochs", "1", "--set", "train.batch=4", "--set", "train.warmup_epochs=0"}) {
      args.push_back(s);
    }
    for (const std::string& s : paths()) args.push_back(s);
    return args;
  }

  fs::path root_;
};

TEST(RunConfigTest, DefaultsDumpAndReload) {
  RunConfig a;
  a.set("run.seed", "11");
  a.set("model.grid", "2x2");
  a.set("train.crop_scales", "1.0,0.5");
  RunConfig b;
  b.load_text(a.dump(true), "dump");
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(b.get_int("run.seed"), 11);
  EXPECT_EQ(b.get_extent("model.grid"), (Extent2{2, 2}));
  EXPECT_EQ(b.get_real_list("train.crop_scales"), (std::vector<double>{1.0, 0.5}));
}

TEST(RunConfigTest, EveryKeyIsDocumented) {
  const RunConfig c;
  const std::string docs = c.dump(true);
  for (const std::string& k : c.keys()) {
    const auto at = docs.find(k);
    ASSERT_NE(at, std::string::npos) << k;
  }
  EXPECT_GT(std::count(docs.begin(), docs.end(), '#'), static_cast<long>(c.keys().size()) / 2);
}

TEST(RunConfigTest, ErrorsNameTheOrigin) {
  RunConfig c;
  try {
    c.load_text("run.seed = 1\nmodel.gird = 3x3\n", "exp.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("exp.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.set("run.seed", "abc"), ConfigError);
  EXPECT_THROW(c.set("model.grid", "3"), ConfigError);
  EXPECT_THROW(c.set("model.spatial_stacking", "maybe"), ConfigError);
  EXPECT_THROW(c.load_text("no equals sign here\n"), ConfigError);
  EXPECT_THROW(c.load_file("/nonexistent/cfg"), ConfigError);
}

TEST(RunConfigTest, DerivedConfigs) {
  RunConfig c;
  c.set("model.variant", "tiny");
  c.set("data.task", "motion-direction");
  const ModelConfig m = model_config(c);
  EXPECT_EQ(m.num_classes, 400);
  EXPECT_EQ(m.input_size, (Extent2{224, 224}));
  c.set("model.variant", "toy");
  EXPECT_EQ(model_config(c).num_classes, task_num_classes(Task::kMotionDirection));
  EXPECT_EQ(model_config(c).input_size, (Extent2{64, 64}));
  EXPECT_EQ(parse_views("4x3"), (std::pair<int, int>{4, 3}));
  EXPECT_THROW(parse_views("4"), ConfigError);
  EXPECT_THROW(parse_views("0x1"), ConfigError);
  c.set("model.variant", "huge");
  EXPECT_THROW(model_config(c), ConfigError);
}

TEST_F(CliTest, BadInvocationsExitOne) {
  EXPECT_EQ(invoke({}).code, kExitConfig);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(invoke({"analyze", "colours"}).code, kExitConfig);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);

  auto args = paths();
  args.insert(args.begin(), "gen-data");
  auto zero = args;
  zero.insert(zero.end(), {"--videos", "0"});
  const Outcome z = invoke(zero);
  EXPECT_EQ(z.code, kExitConfig);
  EXPECT_FALSE(z.err.empty());

  auto unknown = args;
  unknown.insert(unknown.end(), {"--set", "model.gird=3x3"});
  const Outcome u = invoke(unknown);
  EXPECT_EQ(u.code, kExitConfig);
  EXPECT_NE(u.err.find("model.gird"), std::string::npos);

  auto train = paths();
  train.insert(train.begin(), "train");
  const Outcome missing = invoke(train);
  EXPECT_EQ(missing.code, kExitConfig);
  EXPECT_NE(missing.err.find("gen-data"), std::string::npos);
}

TEST_F(CliTest, GenDataWritesVerifiableManifests) {
  std::vector<std::string> args{"gen-data", "--videos", "2500", "--seed", "7", "--set", "data.val_videos=20",
                                "--set", "data.threads=4"};
  for (const std::string& s : paths()) args.push_back(s);
  const Outcome first = invoke(args);
  ASSERT_EQ(first.code, kExitOk) << first.err;
  const auto lines = json_lines(first.out);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0]["videos"], 2500);
  EXPECT_EQ(lines[1]["videos"], 20);

  const Dataset train = Dataset::load(root_ / "data" / "train.json");
  EXPECT_EQ(train.size_videos(), 2500u);
  EXPECT_FALSE(train.verify(4).has_value());
  const std::string manifest = read_file(root_ / "data" / "train.json");

  // Existing data is protected; --force regenerates the same bytes.
  EXPECT_EQ(invoke(args).code, kExitConfig);
  args.push_back("--force");
  const Outcome second = invoke(args);
  ASSERT_EQ(second.code, kExitOk) << second.err;
  EXPECT_EQ(json_lines(second.out), lines);
  EXPECT_EQ(read_file(root_ / "data" / "train.json"), manifest);
}

TEST_F(CliTest, EchoedConfigReproducesTheRun) {
  std::vector<std::string> args{"gen-data", "--videos", "12", "--seed", "3", "--set", "data.val_videos=4"};
  for (const std::string& s : paths()) args.push_back(s);
  const Outcome first = invoke(args);
  ASSERT_EQ(first.code, kExitOk) << first.err;
  const fs::path cfg = root_ / "echo.cfg";
  std::ofstream(cfg) << echoed_config(first.out);
  const Outcome again = invoke({"gen-data", "--config", cfg.string(), "--force"});
  ASSERT_EQ(again.code, kExitOk) << again.err;
  EXPECT_EQ(again.out, first.out);
}

TEST_F(CliTest, DryRunPrintsConfigAndCosts) {
  const Outcome o = invoke({"train", "--dry-run", "--variant", "tiny", "--dataset", (root_ / "none").string()});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  EXPECT_NE(o.out.find("model.variant = tiny"), std::string::npos);
  EXPECT_NE(o.out.find("# end config"), std::string::npos);
  EXPECT_NE(o.out.find("params"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "ckpt"));
}

TEST_F(CliTest, CostReports) {
  const Outcome p = invoke({"analyze", "params", "--variant", "tiny"});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  const json pj = json_lines(p.out).back();
  EXPECT_NEAR(pj["params"].get<double>() / 1e6, 44.7, 44.7 * 0.02);

  const Outcome f = invoke({"analyze", "flops", "--variant", "small", "--frames", "9"});
  ASSERT_EQ(f.code, kExitOk) << f.err;
  const json fj = json_lines(f.out).back();
  EXPECT_NEAR(fj["flops_per_view"].get<double>() / 1e9, 79.0, 79.0 * 0.05);
  EXPECT_EQ(fj["convention"], "one multiply-accumulate = one flop");
}

TEST_F(CliTest, TrainEvalResumeAndAnalyses) {
  ASSERT_EQ(invoke(small({"gen-data"})).code, kExitOk);

  const Outcome tr = invoke(small({"train"}));
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  const json final = json_lines(tr.out).back();
  EXPECT_EQ(final["split"], "final");
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "last.json") && fs::exists(root_ / "ckpt" / "last.bin"));
  const std::string metrics = read_file(root_ / "metrics.jsonl");
  EXPECT_FALSE(metrics.empty());

  // The last checkpoint re-evaluates to the logged validation metric.
  const Outcome ev = invoke(small({"eval", "--checkpoint", (root_ / "ckpt" / "last").string()}));
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  EXPECT_NE(ev.out.find("# 1 forward passes per video"), std::string::npos);
  const json e = json_lines(ev.out).back();
  EXPECT_DOUBLE_EQ(e["top1"].get<double>(), final["val_top1"].get<double>());

  const Outcome views = invoke(small({"eval", "--views", "4x1"}));
  ASSERT_EQ(views.code, kExitOk) << views.err;
  EXPECT_NE(views.out.find("# 4 forward passes per video"), std::string::npos);

  // Resuming a finished run replays nothing and reports the same result.
  const Outcome re = invoke(small({"train", "--resume"}));
  ASSERT_EQ(re.code, kExitOk) << re.err;
  EXPECT_EQ(json_lines(re.out).back()["val_top1"], final["val_top1"]);

  // A checkpoint from a different architecture is rejected.
  const Outcome wrong = invoke(small({"eval", "--set", "model.head_width=64"}));
  EXPECT_EQ(wrong.code, kExitConfig);
  EXPECT_FALSE(wrong.err.empty());

  const Outcome cam = invoke(small({"analyze", "cam", "--clip-index", "1"}));
  ASSERT_EQ(cam.code, kExitOk) << cam.err;
  int pgms = 0;
  for (const auto& entry : fs::directory_iterator(root_ / "out" / "cam")) {
    pgms += entry.path().extension() == ".pgm";
  }
  EXPECT_EQ(pgms, 9);
  EXPECT_EQ(invoke(small({"analyze", "cam", "--clip-index", "6"})).code, kExitConfig);

  const Outcome sh = invoke(small({"analyze", "shuffle"}));
  ASSERT_EQ(sh.code, kExitOk) << sh.err;
  const auto rows = json_lines(read_file(root_ / "out" / "shuffle.jsonl"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["order"], "normal");
  EXPECT_EQ(rows[1]["order"], "reverse");
  EXPECT_EQ(rows[2]["order"], "random");
  EXPECT_DOUBLE_EQ(rows[0]["top1"].get<double>(), e["top1"].get<double>());
}

TEST_F(CliTest, AblationWritesTable) {
  ASSERT_EQ(invoke(small({"gen-data"})).code, kExitOk);
  const Outcome o = invoke(small({"analyze", "ablation", "--suite", "stacking_stage"}));
  ASSERT_EQ(o.code, kExitOk) << o.err;
  EXPECT_TRUE(fs::exists(root_ / "out" / "ablation_stacking_stage.txt"));
  EXPECT_GE(json_lines(read_file(root_ / "out" / "ablation_stacking_stage.jsonl")).size(), 2u);
}

TEST_F(CliTest, DivergenceExitsTwo) {
  ASSERT_EQ(invoke(small({"gen-data"})).code, kExitOk);
  const Outcome o = invoke(small({"train", "--set", "train.lr=1e38", "--set", "train.lr_min=0"}));
  EXPECT_EQ(o.code, kExitNumerical);
  EXPECT_NE(o.err.find("numerical"), std::string::npos);
}

TEST_F(CliTest, BenchReportsTimings) {
  const Outcome o = invoke({"bench", "--set", "model.input=32x32", "--set", "bench.runs=3"});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const json j = json_lines(o.out).back();
  EXPECT_EQ(j["runs"], 3);
  EXPECT_GT(j["mean_ms"].get<double>(), 0.0);
}

}  // namespace
}  // namespace vidconv::cli

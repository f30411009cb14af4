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

#include "vidconv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vidconv {

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
}

}  // namespace

const NamedArray* ArrayFile::find(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_arrays(const std::filesystem::path& stem, const std::vector<NamedArray>& arrays,
                  const nlohmann::json& meta) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  nlohmann::json index = nlohmann::json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw ConfigError("cannot write " + with_ext(stem, ".bin").string());
  std::int64_t offset = 0;
  std::vector<std::uint32_t> buf;
  for (const NamedArray& a : arrays) {
    if (shape_numel(a.shape) != std::ssize(a.data)) {
      throw ShapeError("array '" + a.name + "' does not match its shape");
    }
    buf.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &a.data[i], 4);
      buf[i] = to_le(bits);
    }
    bin.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                     {"length", std::ssize(a.data)}});
    offset += std::ssize(a.data);
  }
  if (!bin) throw ConfigError("failed writing " + with_ext(stem, ".bin").string());
  nlohmann::json j;
  j["format"] = "vidconv-checkpoint";
  j["version"] = 1;
  j["dtype"] = "float32-le";
  j["meta"] = meta;
  j["arrays"] = std::move(index);
  std::ofstream f(with_ext(stem, ".json"));
  if (!f) throw ConfigError("cannot write " + with_ext(stem, ".json").string());
  f << j.dump(1) << '\n';
}

ArrayFile read_arrays(const std::filesystem::path& stem) {
  std::ifstream f(with_ext(stem, ".json"));
  if (!f) throw ConfigError("cannot read checkpoint " + with_ext(stem, ".json").string());
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw ConfigError("cannot read checkpoint " + with_ext(stem, ".bin").string());
  ArrayFile out;
  try {
    const nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("format") != "vidconv-checkpoint") throw ConfigError("not a checkpoint");
    out.meta = j.at("meta");
    std::vector<std::uint32_t> buf;
    for (const auto& e : j.at("arrays")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::int64_t>();
      const auto length = e.at("length").get<std::int64_t>();
      if (length != shape_numel(a.shape) || offset < 0) {
        throw ConfigError("checkpoint entry '" + a.name + "' is inconsistent");
      }
      buf.resize(static_cast<std::size_t>(length));
      bin.seekg(offset * 4);
      bin.read(reinterpret_cast<char*>(buf.data()), length * 4);
      if (!bin) throw ConfigError("checkpoint blob is truncated at '" + a.name + "'");
      a.data.resize(buf.size());
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::uint32_t bits = to_le(buf[i]);
        std::memcpy(&a.data[i], &bits, 4);
      }
      out.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + stem.string() + ": " + e.what());
  }
  return out;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"variant", variant_name(c.variant)},
      {"channels", c.channels},
      {"blocks", c.blocks},
      {"grid", {c.grid.h, c.grid.w}},
      {"frames", c.frames},
      {"stacking_stage", c.stacking_stage},
      {"spatial_stacking", c.spatial_stacking},
      {"head_width", c.head_width},
      {"num_classes", c.num_classes},
      {"drop_path_rate", c.drop_path_rate},
      {"head_dropout", c.head_dropout},
      {"use_temporal_branch", c.use_temporal_branch},
      {"use_neck", c.use_neck},
      {"temporal_bias", c.temporal_bias},
      {"input_size", {c.input_size.h, c.input_size.w}},
      {"layer_scale_init", c.layer_scale_init},
      {"alpha_init", c.alpha_init},
      {"init_std", c.init_std},
      {"gelu", c.gelu == GeluMode::kTanh ? "tanh" : "erf"},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.channels = j.at("channels").get<std::array<int, kNumStages>>();
    c.blocks = j.at("blocks").get<std::array<int, kNumStages>>();
    c.grid = {j.at("grid").at(0).get<int>(), j.at("grid").at(1).get<int>()};
    c.frames = j.at("frames").get<int>();
    c.stacking_stage = j.at("stacking_stage").get<int>();
    c.spatial_stacking = j.at("spatial_stacking").get<bool>();
    c.head_width = j.at("head_width").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.drop_path_rate = j.at("drop_path_rate").get<double>();
    c.head_dropout = j.at("head_dropout").get<double>();
    c.use_temporal_branch = j.at("use_temporal_branch").get<bool>();
    c.use_neck = j.at("use_neck").get<bool>();
    c.temporal_bias = j.at("temporal_bias").get<bool>();
    c.input_size = {j.at("input_size").at(0).get<std::int64_t>(),
                    j.at("input_size").at(1).get<std::int64_t>()};
    c.layer_scale_init = j.at("layer_scale_init").get<double>();
    c.alpha_init = j.at("alpha_init").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.gelu = j.at("gelu").get<std::string>() == "erf" ? GeluMode::kErf : GeluMode::kTanh;
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

std::vector<NamedArray> model_arrays(const VidConvModel& model) {
  std::vector<NamedArray> out;
  for (const Parameter& p : model.parameters()) {
    out.push_back({p.name, p.value.shape(), p.value.values()});
  }
  return out;
}

void restore_model(VidConvModel& model, const ArrayFile& file) {
  for (Parameter& p : model.parameters()) {
    const NamedArray* a = file.find(p.name);
    if (a == nullptr) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (a->shape != p.value.shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_str(a->shape) +
                       ", model expects " + shape_str(p.value.shape()));
    }
    std::copy(a->data.begin(), a->data.end(), p.value.data().begin());
  }
}

void save_model(const std::filesystem::path& stem, const VidConvModel& model,
                nlohmann::json meta) {
  meta["model"] = config_to_json(model.config());
  write_arrays(stem, model_arrays(model), meta);
}

VidConvModel load_model(const std::filesystem::path& stem) {
  const ArrayFile file = read_arrays(stem);
  if (!file.meta.contains("model")) throw ConfigError("checkpoint has no model config");
  VidConvModel model(config_from_json(file.meta.at("model")), 0);
  restore_model(model, file);
  return model;
}

}  // namespace vidconv

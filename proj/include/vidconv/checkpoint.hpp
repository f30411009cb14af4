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

#ifndef VIDCONV_CHECKPOINT_HPP_
#define VIDCONV_CHECKPOINT_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidconv/model.hpp"
#include "vidconv/tensor.hpp"

namespace vidconv {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// A checkpoint is `<stem>.json` (metadata plus an index of
/// {name, shape, offset, length}) and `<stem>.bin` holding the arrays as
/// little-endian float32, back to back.
struct ArrayFile {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_arrays(const std::filesystem::path& stem, const std::vector<NamedArray>& arrays,
                  const nlohmann::json& meta);
ArrayFile read_arrays(const std::filesystem::path& stem);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Model parameters become arrays named after the parameters.
std::vector<NamedArray> model_arrays(const VidConvModel& model);
// Copies matching arrays into the model; every parameter must be present.
void restore_model(VidConvModel& model, const ArrayFile& file);

void save_model(const std::filesystem::path& stem, const VidConvModel& model,
                nlohmann::json meta = nlohmann::json::object());
VidConvModel load_model(const std::filesystem::path& stem);

}  // namespace vidconv

#endif  // VIDCONV_CHECKPOINT_HPP_

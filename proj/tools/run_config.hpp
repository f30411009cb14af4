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

#ifndef VIDCONV_TOOLS_RUN_CONFIG_HPP_
#define VIDCONV_TOOLS_RUN_CONFIG_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vidconv/analysis.hpp"
#include "vidconv/data.hpp"
#include "vidconv/model.hpp"
#include "vidconv/training.hpp"

namespace vidconv::cli {

enum class ValueType { kInt, kReal, kBool, kString, kIntList, kRealList, kExtent };

/// Flat `section.key = value` configuration. Every key is declared with a
/// type, a default and a one-line description; unknown keys are errors.
class RunConfig {
 public:
  RunConfig();

  bool has(const std::string& key) const { return entries_.contains(key); }
  // Validates the value against the key's type before storing it.
  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;
  Extent2 get_extent(const std::string& key) const;

  // Lines of `key = value`; '#' starts a comment.
  void load_text(const std::string& text, const std::string& origin = "<config>");
  void load_file(const std::filesystem::path& path);

  // Every key with its resolved value, grouped by section, loadable again.
  std::string dump(bool with_docs = false) const;

  std::vector<std::string> keys() const;

 private:
  struct Entry {
    ValueType type;
    std::string value;
    std::string doc;
  };
  void declare(const std::string& key, ValueType type, std::string value, std::string doc);
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

// Resolved views of the configuration.
std::uint64_t root_seed(const RunConfig& c);
Task task_of(const RunConfig& c);
ModelConfig model_config(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
EvalOptions eval_options(const RunConfig& c, const ModelConfig& model);
// "4x1" -> clips 4, crops 1.
std::pair<int, int> parse_views(const std::string& text);

}  // namespace vidconv::cli

#endif  // VIDCONV_TOOLS_RUN_CONFIG_HPP_

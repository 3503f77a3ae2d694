// Copyright 2026 The splitkf Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// JSON configuration files: parsing with line/field diagnostics and the
// schemas of the dataset, training and experiment configs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitkf/dataset.hpp"
#include "splitkf/kalmannet.hpp"
#include "splitkf/learned_filter.hpp"
#include "splitkf/split_kalmannet.hpp"

namespace splitkf {

/// Parses JSON text; syntax errors become usage errors naming line and column.
nlohmann::json parse_config_text(const std::string& text, const std::string& origin);
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Typed access to an object with the dotted path kept for diagnostics.
/// Unknown keys are rejected by finish().
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& object, std::string path);

  bool has(const std::string& key) const;
  double number(const std::string& key, std::optional<double> fallback = std::nullopt);
  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt);
  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt);
  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt);
  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt);
  std::vector<std::string> strings(const std::string& key,
                                   std::optional<std::vector<std::string>> fallback = std::nullopt);
  ConfigReader object(const std::string& key);
  const nlohmann::json& raw(const std::string& key);
  std::string field(const std::string& key) const;

  /// Fails on keys that were never read.
  void finish() const;

 private:
  const nlohmann::json& lookup(const std::string& key, const char* expected);

  const nlohmann::json* json_;
  std::string path_;
  std::vector<std::string> seen_;
};

/// Dataset generation config: scenario fields, a "noise" object whose
/// sigma_w2 / sigma_v2 are numbers or [lo, hi] ranges, and optional
/// "association_seed".
struct GenerateSpec {
  ScenarioConfig scenario;
  NoiseSpec noise;
  std::optional<std::uint64_t> association_seed;
};
GenerateSpec generate_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerateSpec& spec);
Dataset generate(const GenerateSpec& spec);

/// Training config for the learned estimators.
struct TrainSpec {
  std::string estimator{"A4"};  // "A3" or "A4"
  std::string dataset;          // path; may be empty when the dataset is supplied in code
  TrainingConfig training;
  KalmanNetConfig kalmannet;
  SplitKalmanNetConfig split;
};
TrainSpec train_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainSpec& spec);

/// Builds and trains the estimator named by spec on ds.
struct TrainedModel {
  LearnedGainFilter filter;
  TrainingLog log;
};
TrainedModel train_model(const SlamModel& system, const Dataset& ds, const TrainSpec& spec);
nlohmann::json to_json(const TrainingLog& log);

}  // namespace splitkf

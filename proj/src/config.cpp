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

#include "splitkf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "splitkf/error.hpp"

namespace splitkf {

using nlohmann::json;

namespace {

std::string position_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

const char* type_name(const json& j) { return j.type_name(); }

}  // namespace

json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte is one past the offending character.
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    fail(ErrorKind::kUsage, origin + ": " + position_of(text, byte) + ": malformed JSON");
  }
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kResolution, "cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

ConfigReader::ConfigReader(const json& object, std::string path) : json_(&object), path_(std::move(path)) {
  if (!object.is_object()) {
    fail(ErrorKind::kUsage, "field '" + (path_.empty() ? std::string("<root>") : path_) + "': expected object, got " +
                                type_name(object));
  }
}

std::string ConfigReader::field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

bool ConfigReader::has(const std::string& key) const { return json_->contains(key); }

const json& ConfigReader::lookup(const std::string& key, const char* expected) {
  seen_.push_back(key);
  if (!json_->contains(key)) fail(ErrorKind::kUsage, "field '" + field(key) + "': missing (expected " + expected + ")");
  return json_->at(key);
}

double ConfigReader::number(const std::string& key, std::optional<double> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "number");
  if (!v.is_number()) fail(ErrorKind::kUsage, "field '" + field(key) + "': expected number, got " + type_name(v));
  return v.get<double>();
}

std::int64_t ConfigReader::integer(const std::string& key, std::optional<std::int64_t> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "integer");
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  fail(ErrorKind::kUsage, "field '" + field(key) + "': expected integer, got " + v.dump());
}

bool ConfigReader::boolean(const std::string& key, std::optional<bool> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "boolean");
  if (!v.is_boolean()) fail(ErrorKind::kUsage, "field '" + field(key) + "': expected boolean, got " + type_name(v));
  return v.get<bool>();
}

std::string ConfigReader::string(const std::string& key, std::optional<std::string> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "string");
  if (!v.is_string()) fail(ErrorKind::kUsage, "field '" + field(key) + "': expected string, got " + type_name(v));
  return v.get<std::string>();
}

std::vector<double> ConfigReader::numbers(const std::string& key, std::optional<std::vector<double>> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "array of numbers");
  if (!v.is_array()) fail(ErrorKind::kUsage, "field '" + field(key) + "': expected array, got " + type_name(v));
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) {
      fail(ErrorKind::kUsage, "field '" + field(key) + "[" + std::to_string(i) + "]': expected number");
    }
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<std::string> ConfigReader::strings(const std::string& key,
                                               std::optional<std::vector<std::string>> fallback) {
  if (fallback && !has(key)) {
    seen_.push_back(key);
    return *fallback;
  }
  const json& v = lookup(key, "array of strings");
  if (!v.is_array()) fail(ErrorKind::kUsage, "field '" + field(key) + "': expected array, got " + type_name(v));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) {
      fail(ErrorKind::kUsage, "field '" + field(key) + "[" + std::to_string(i) + "]': expected string");
    }
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

ConfigReader ConfigReader::object(const std::string& key) { return ConfigReader(lookup(key, "object"), field(key)); }

const json& ConfigReader::raw(const std::string& key) { return lookup(key, "value"); }

void ConfigReader::finish() const {
  for (auto it = json_->begin(); it != json_->end(); ++it) {
    if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
      fail(ErrorKind::kUsage, "field '" + field(it.key()) + "': unknown field");
    }
  }
}

namespace {

VarianceRange read_range(ConfigReader& r, const std::string& key, VarianceRange fallback) {
  if (!r.has(key)) {
    r.number(key, 0.0);
    return fallback;
  }
  const json& v = r.raw(key);
  if (v.is_number()) return {v.get<double>(), v.get<double>()};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  fail(ErrorKind::kUsage, "field '" + r.field(key) + "': expected number or [lo, hi]");
}

FeatureRouting read_routing(ConfigReader& r, const std::string& key, const FeatureRouting& fallback) {
  if (!r.has(key)) {
    r.strings(key, std::vector<std::string>{});
    return fallback;
  }
  FeatureRouting out;
  for (const std::string& name : r.strings(key)) {
    try {
      out.push_back(feature_group_from_name(name));
    } catch (const Error& e) {
      fail(ErrorKind::kUsage, "field '" + r.field(key) + "': " + e.what());
    }
  }
  return out;
}

json routing_json(const FeatureRouting& routing) {
  json out = json::array();
  for (FeatureGroup g : routing) out.push_back(feature_group_name(g));
  return out;
}

template <typename F>
auto checked(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kInvalidArgument) fail(ErrorKind::kUsage, e.what());
    throw;
  }
}

}  // namespace

GenerateSpec generate_spec_from_json(const json& j) {
  ConfigReader r(j, "");
  GenerateSpec spec;
  ScenarioConfig& s = spec.scenario;
  s.landmarks = static_cast<int>(r.integer("landmarks", 5));
  s.landmark_box = static_cast<int>(r.integer("landmark_box", 30));
  s.speed = r.number("speed", 5.0);
  s.steps = static_cast<int>(r.integer("steps", 20));
  s.trajectories = static_cast<int>(r.integer("trajectories", 100));
  s.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
  s.p_switch = r.number("p_switch", 0.0);
  if (r.has("association_seed")) spec.association_seed = static_cast<std::uint64_t>(r.integer("association_seed"));
  if (r.has("noise")) {
    ConfigReader n = r.object("noise");
    spec.noise.sigma_w2 = read_range(n, "sigma_w2", {1e-3, 1e-3});
    spec.noise.sigma_v2 = read_range(n, "sigma_v2", {1e-3, 1e-3});
    spec.noise.q2 = n.number("q2", 10.0);
    spec.noise.r2 = n.number("r2", 1e3);
    n.finish();
  } else {
    r.object("noise");
  }
  r.finish();
  checked([&] {
    spec.scenario.validate();
    spec.noise.validate();
    return 0;
  });
  return spec;
}

json to_json(const GenerateSpec& spec) {
  json j = scenario_to_json(spec.scenario);
  j["noise"] = noise_spec_to_json(spec.noise);
  if (spec.association_seed) j["association_seed"] = *spec.association_seed;
  return j;
}

Dataset generate(const GenerateSpec& spec) {
  ScenarioConfig scenario = spec.scenario;
  const double p = scenario.p_switch;
  if (spec.association_seed) scenario.p_switch = 0.0;
  Dataset ds = generate_dataset(scenario, spec.noise);
  if (spec.association_seed && p > 0.0) ds = inject_association_errors(std::move(ds), p, *spec.association_seed);
  return ds;
}

TrainSpec train_spec_from_json(const json& j) {
  ConfigReader r(j, "");
  TrainSpec spec;
  spec.estimator = r.string("estimator", std::string("A4"));
  if (spec.estimator != "A3" && spec.estimator != "A4") {
    fail(ErrorKind::kUsage, "field 'estimator': expected \"A3\" or \"A4\", got \"" + spec.estimator + "\"");
  }
  spec.dataset = r.string("dataset", std::string());
  TrainingConfig& t = spec.training;
  t.epochs = static_cast<int>(r.integer("epochs", t.epochs));
  t.batch_size = static_cast<int>(r.integer("batch_size", t.batch_size));
  t.adam.learning_rate = r.number("learning_rate", t.adam.learning_rate);
  t.adam.clip_norm = r.number("clip_norm", t.adam.clip_norm);
  t.validation_fraction = r.number("validation_fraction", t.validation_fraction);
  t.seed = static_cast<std::uint64_t>(r.integer("seed", static_cast<std::int64_t>(t.seed)));
  t.max_cycles = static_cast<int>(r.integer("max_cycles", t.max_cycles));
  t.convergence_tolerance = r.number("convergence_tolerance", t.convergence_tolerance);
  t.normalization_trajectories =
      static_cast<std::size_t>(r.integer("normalization_trajectories", static_cast<std::int64_t>(t.normalization_trajectories)));
  if (spec.estimator == "A3") {
    spec.kalmannet.embed_dim = static_cast<int>(r.integer("embed_dim", spec.kalmannet.embed_dim));
    spec.kalmannet.hidden_dim = static_cast<int>(r.integer("hidden_dim", spec.kalmannet.hidden_dim));
    spec.kalmannet.head_scale = r.number("head_scale", spec.kalmannet.head_scale);
    spec.kalmannet.routing = read_routing(r, "routing", spec.kalmannet.routing);
  } else {
    spec.split.embed_dim = static_cast<int>(r.integer("embed_dim", spec.split.embed_dim));
    spec.split.hidden_dim = static_cast<int>(r.integer("hidden_dim", spec.split.hidden_dim));
    spec.split.head_scale = r.number("head_scale", spec.split.head_scale);
    spec.split.g1_routing = read_routing(r, "g1_routing", spec.split.g1_routing);
    spec.split.g2_routing = read_routing(r, "g2_routing", spec.split.g2_routing);
    spec.split.joint = r.boolean("joint", spec.split.joint);
    spec.split.calibrate_g2 = r.boolean("calibrate_g2", spec.split.calibrate_g2);
    spec.split.factor_form = checked([&] { return factor_form_from_name(r.string("factor_form", std::string("gram"))); });
    spec.split.g1_init = r.number("g1_init", spec.split.g1_init);
    spec.split.g2_init = r.number("g2_init", spec.split.g2_init);
  }
  r.finish();
  auto positive = [&](bool ok, const char* key) {
    if (!ok) fail(ErrorKind::kUsage, std::string("field '") + key + "': out of range");
  };
  positive(t.epochs >= 1, "epochs");
  positive(t.batch_size >= 1, "batch_size");
  positive(t.adam.learning_rate > 0.0, "learning_rate");
  positive(t.adam.clip_norm > 0.0, "clip_norm");
  positive(t.validation_fraction >= 0.0 && t.validation_fraction < 1.0, "validation_fraction");
  positive(t.max_cycles >= 1, "max_cycles");
  return spec;
}

json to_json(const TrainSpec& spec) {
  const TrainingConfig& t = spec.training;
  json j = {{"estimator", spec.estimator},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.adam.learning_rate},
            {"clip_norm", t.adam.clip_norm},
            {"validation_fraction", t.validation_fraction},
            {"seed", t.seed},
            {"max_cycles", t.max_cycles},
            {"convergence_tolerance", t.convergence_tolerance},
            {"normalization_trajectories", t.normalization_trajectories}};
  if (!spec.dataset.empty()) j["dataset"] = spec.dataset;
  if (spec.estimator == "A3") {
    j["embed_dim"] = spec.kalmannet.embed_dim;
    j["hidden_dim"] = spec.kalmannet.hidden_dim;
    j["head_scale"] = spec.kalmannet.head_scale;
    j["routing"] = routing_json(spec.kalmannet.routing);
  } else {
    j["embed_dim"] = spec.split.embed_dim;
    j["hidden_dim"] = spec.split.hidden_dim;
    j["head_scale"] = spec.split.head_scale;
    j["g1_routing"] = routing_json(spec.split.g1_routing);
    j["g2_routing"] = routing_json(spec.split.g2_routing);
    j["joint"] = spec.split.joint;
    j["calibrate_g2"] = spec.split.calibrate_g2;
    j["factor_form"] = factor_form_name(spec.split.factor_form);
    j["g1_init"] = spec.split.g1_init;
    j["g2_init"] = spec.split.g2_init;
  }
  return j;
}

TrainedModel train_model(const SlamModel& system, const Dataset& ds, const TrainSpec& spec) {
  require(state_dim_for(ds.landmarks()) == system.state_dim(), "train_model: dataset and model disagree on the landmark count");
  FeatureNormalization norm = compute_normalization(system, ds, spec.training.normalization_trajectories);
  const std::vector<Sequence> seqs = to_sequences(ds);
  const std::uint64_t seed = spec.training.seed;
  if (spec.estimator == "A3") {
    LearnedGainFilter filter = make_kalmannet(system, spec.kalmannet, std::move(norm), seed);
    TrainingLog log = train_a3(filter, seqs, spec.training);
    return {std::move(filter), std::move(log)};
  }
  SplitKalmanNetConfig split = spec.split;
  if (split.calibrate_g2) {
    const std::size_t count = spec.training.normalization_trajectories == 0
                                  ? seqs.size()
                                  : std::min(seqs.size(), spec.training.normalization_trajectories);
    split.g2_init = calibrate_g2_init(system, std::span(seqs).first(count),
                                      [&](std::size_t i) { return slam_filter_model(system, ds.trajectory_noise(i)); },
                                      norm, split.g1_init);
  }
  LearnedGainFilter filter = make_split_kalmannet(system, split, std::move(norm), seed);
  TrainingLog log = train_a4(filter, seqs, spec.training, spec.split.joint);
  return {std::move(filter), std::move(log)};
}

json to_json(const TrainingLog& log) {
  json epochs = json::array();
  for (const EpochRecord& e : log.epochs) {
    epochs.push_back({{"phase", e.phase},
                      {"cycle", e.cycle},
                      {"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"validation_loss", e.validation_loss}});
  }
  return {{"initial_validation_loss", log.initial_validation_loss},
          {"cycles", log.cycles},
          {"converged", log.converged},
          {"epochs", epochs}};
}

}  // namespace splitkf

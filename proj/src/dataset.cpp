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

#include "splitkf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <utility>

#include "json.hpp"

#include "splitkf/rng.hpp"

namespace splitkf {

using nlohmann::json;

void NoiseSpec::validate() const {
  for (const VarianceRange* r : {&sigma_w2, &sigma_v2}) {
    require(std::isfinite(r->lo) && std::isfinite(r->hi) && r->lo >= 0.0 && r->hi >= r->lo,
            "NoiseSpec: variance range must satisfy 0 <= lo <= hi");
    require(r->fixed() || r->lo > 0.0, "NoiseSpec: log-uniform range needs lo > 0");
  }
  NoiseConfig{sigma_w2.lo, sigma_v2.lo, q2, r2}.validate();
}

void ScenarioConfig::validate() const {
  require(landmarks >= 1, "ScenarioConfig: landmarks must be >= 1");
  require(steps >= 1, "ScenarioConfig: steps must be >= 1");
  require(trajectories >= 1, "ScenarioConfig: trajectories must be >= 1");
  require(landmark_box >= 1, "ScenarioConfig: landmark_box must be >= 1");
  require(std::isfinite(speed), "ScenarioConfig: speed must be finite");
  require(p_switch >= 0.0 && p_switch <= 1.0, "ScenarioConfig: p_switch must lie in [0, 1]");
  const long long side = 2LL * landmark_box + 1;
  // The origin cell is excluded: the agent starts there.
  require(landmarks <= side * side - 1,
          "ScenarioConfig: " + std::to_string(landmarks) + " landmarks exceed grid capacity " +
              std::to_string(side * side - 1));
}

namespace {

double draw_variance(const VarianceRange& range, RandomStream& rng) {
  if (range.fixed()) return range.lo;
  const double a = std::log(range.lo);
  const double b = std::log(range.hi);
  return std::exp(rng.uniform(a, b));
}

}  // namespace

Trajectory generate_trajectory(const ScenarioConfig& scenario, const NoiseSpec& noise,
                               std::uint32_t index) {
  RandomStream rng(scenario.seed, stream_id(StreamPurpose::kTrajectory, index));
  Trajectory traj;
  traj.sigma_w2 = draw_variance(noise.sigma_w2, rng);
  traj.sigma_v2 = draw_variance(noise.sigma_v2, rng);

  const int M = scenario.landmarks;
  const int box = scenario.landmark_box;
  const std::uint64_t side = 2 * static_cast<std::uint64_t>(box) + 1;
  std::set<std::uint64_t> used{static_cast<std::uint64_t>(box) * side + box};  // origin
  traj.initial_state = Eigen::VectorXd::Zero(state_dim_for(M));
  for (int m = 0; m < M;) {
    const std::uint64_t cell = rng.uniform_index(side * side);
    if (!used.insert(cell).second) continue;
    traj.initial_state(kPoseDim + 2 * m) = static_cast<double>(static_cast<long long>(cell % side) - box);
    traj.initial_state(kPoseDim + 2 * m + 1) = static_cast<double>(static_cast<long long>(cell / side) - box);
    ++m;
  }

  const NoiseConfig cfg = traj.noise(noise.q2, noise.r2);
  const Eigen::Vector3d process_sd(std::sqrt(cfg.sigma_w2 * cfg.q2), std::sqrt(cfg.sigma_w2 * cfg.q2),
                                   std::sqrt(cfg.sigma_w2));
  const double range_sd = std::sqrt(cfg.sigma_v2 * cfg.r2);
  const double bearing_sd = std::sqrt(cfg.sigma_v2);

  auto noisy_measurement = [&](const Eigen::VectorXd& x, Eigen::VectorXd& residual) {
    Eigen::VectorXd y = measure(x);
    residual.resize(2 * M);
    for (int m = 0; m < M; ++m) {
      residual(2 * m) = range_sd * rng.normal();
      residual(2 * m + 1) = bearing_sd * rng.normal();
      y(2 * m) += residual(2 * m);
      y(2 * m + 1) = wrap_angle(y(2 * m + 1) + residual(2 * m + 1));
    }
    return y;
  };

  traj.initial_measurement = noisy_measurement(traj.initial_state, traj.initial_measurement_noise);

  const int T = scenario.steps;
  traj.states.reserve(T);
  traj.inputs.reserve(T);
  traj.measurements.reserve(T);
  traj.process_noise.reserve(T);
  traj.measurement_noise.reserve(T);
  Eigen::VectorXd x = traj.initial_state;
  for (int t = 0; t < T; ++t) {
    const MotionInput u{scenario.speed, rng.uniform(-std::numbers::pi, std::numbers::pi)};
    Eigen::VectorXd w(3);
    for (int k = 0; k < 3; ++k) w(k) = process_sd(k) * rng.normal();
    x = motion_step(x, u, w);
    Eigen::VectorXd residual;
    traj.measurements.push_back(noisy_measurement(x, residual));
    traj.states.push_back(x);
    traj.inputs.push_back(u);
    traj.process_noise.push_back(std::move(w));
    traj.measurement_noise.push_back(std::move(residual));
  }
  return traj;
}

Dataset generate_dataset(const ScenarioConfig& scenario, const NoiseSpec& noise) {
  scenario.validate();
  noise.validate();
  Dataset ds;
  ds.scenario = scenario;
  ds.noise = noise;
  ds.trajectories.reserve(scenario.trajectories);
  for (int i = 0; i < scenario.trajectories; ++i) {
    ds.trajectories.push_back(generate_trajectory(scenario, noise, static_cast<std::uint32_t>(i)));
  }
  if (scenario.p_switch > 0.0) {
    ds = inject_association_errors(std::move(ds), scenario.p_switch, scenario.seed);
  }
  return ds;
}

Dataset inject_association_errors(Dataset ds, double p_switch, std::uint64_t seed) {
  require(p_switch >= 0.0 && p_switch <= 1.0, "inject_association_errors: p_switch must lie in [0, 1]");
  const int M = ds.landmarks();
  require(M >= 2, "inject_association_errors: need at least two landmarks");
  ds.scenario.p_switch = p_switch;
  ds.association_seed = seed;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    Trajectory& traj = ds.trajectories[i];
    RandomStream rng(seed, stream_id(StreamPurpose::kAssociation, static_cast<std::uint32_t>(i)));
    for (int t = 0; t < traj.steps(); ++t) {
      if (!(rng.uniform() < p_switch)) continue;
      const int a = static_cast<int>(rng.uniform_index(M));
      int b = static_cast<int>(rng.uniform_index(M - 1));
      if (b >= a) ++b;
      Eigen::VectorXd& y = traj.measurements[t];
      std::swap(y(2 * a), y(2 * b));
      std::swap(y(2 * a + 1), y(2 * b + 1));
      traj.swaps.push_back({t, std::min(a, b), std::max(a, b)});
    }
  }
  return ds;
}

Eigen::VectorXd initial_estimate(const Trajectory& traj) {
  const int M = landmark_count_for(traj.initial_state.size());
  Eigen::VectorXd x = traj.initial_state;
  const Pose<double> pose = pose_of(traj.initial_state);
  for (int m = 0; m < M; ++m) {
    // A noisy range can come out non-positive for a close landmark.
    const double r = std::max(traj.initial_measurement(2 * m), kInitialRangeFloor);
    x.segment<2>(kPoseDim + 2 * m) = inverse_observation(pose, r, traj.initial_measurement(2 * m + 1));
  }
  return x;
}

ScenarioConfig training_scenario(int trajectories, int steps, std::uint64_t seed) {
  return {5, 30, 5.0, steps, trajectories, seed, 0.0};
}

NoiseSpec training_noise() { return {{5e-4, 5e-2}, {5e-4, 5e-2}, 10.0, 1e3}; }

ScenarioConfig test_scenario(int trajectories, int steps, std::uint64_t seed) {
  return {5, 30, 1.0, steps, trajectories, seed, 0.0};
}

// ---------------------------------------------------------------------------
// Persistence: line 1 is a JSON header, then one JSON record per trajectory.

namespace {

constexpr const char* kFormatName = "splitkf.dataset";

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json rows_json(const std::vector<Eigen::VectorXd>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(vec_json(r));
  return out;
}

[[noreturn]] void bad_record(std::size_t index, const std::string& why) {
  fail(ErrorKind::kFormat, "dataset record " + std::to_string(index) + ": " + why);
}

Eigen::VectorXd json_vec(const json& j, Eigen::Index expected, std::size_t index, const char* field) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != expected) {
    bad_record(index, std::string("field '") + field + "' has wrong length");
  }
  Eigen::VectorXd v(expected);
  for (Eigen::Index k = 0; k < expected; ++k) {
    if (!j[k].is_number()) bad_record(index, std::string("field '") + field + "' is not numeric");
    v(k) = j[k].get<double>();
  }
  return v;
}

std::vector<Eigen::VectorXd> json_rows(const json& j, int count, Eigen::Index width, std::size_t index,
                                       const char* field) {
  if (!j.is_array() || static_cast<int>(j.size()) != count) {
    bad_record(index, std::string("field '") + field + "' has wrong number of rows");
  }
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(count);
  for (const auto& r : j) rows.push_back(json_vec(r, width, index, field));
  return rows;
}

}  // namespace

json scenario_to_json(const ScenarioConfig& s) {
  return {{"landmarks", s.landmarks}, {"landmark_box", s.landmark_box}, {"speed", s.speed},
          {"steps", s.steps},         {"trajectories", s.trajectories}, {"seed", s.seed},
          {"p_switch", s.p_switch}};
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig s;
  s.landmarks = j.at("landmarks").get<int>();
  s.landmark_box = j.at("landmark_box").get<int>();
  s.speed = j.at("speed").get<double>();
  s.steps = j.at("steps").get<int>();
  s.trajectories = j.at("trajectories").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.p_switch = j.at("p_switch").get<double>();
  return s;
}

json noise_spec_to_json(const NoiseSpec& n) {
  return {{"sigma_w2", {n.sigma_w2.lo, n.sigma_w2.hi}},
          {"sigma_v2", {n.sigma_v2.lo, n.sigma_v2.hi}},
          {"q2", n.q2},
          {"r2", n.r2}};
}

NoiseSpec noise_spec_from_json(const json& j) {
  NoiseSpec n;
  auto range = [](const json& r) {
    if (r.is_number()) return VarianceRange{r.get<double>(), r.get<double>()};
    return VarianceRange{r.at(0).get<double>(), r.at(1).get<double>()};
  };
  n.sigma_w2 = range(j.at("sigma_w2"));
  n.sigma_v2 = range(j.at("sigma_v2"));
  n.q2 = j.at("q2").get<double>();
  n.r2 = j.at("r2").get<double>();
  return n;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kInvalidArgument, "cannot open '" + path.string() + "' for writing");
  json header = {{"format", kFormatName},
                 {"version", kDatasetFormatVersion},
                 {"rng", "philox4x32-10"},
                 {"scenario", scenario_to_json(ds.scenario)},
                 {"noise", noise_spec_to_json(ds.noise)},
                 {"association_seed", ds.association_seed},
                 {"count", ds.trajectories.size()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    json inputs = json::array();
    for (const auto& u : t.inputs) inputs.push_back({u.v, u.dtheta});
    json swaps = json::array();
    for (const auto& s : t.swaps) swaps.push_back({s.step, s.first, s.second});
    json rec = {{"index", i},
                {"sigma_w2", t.sigma_w2},
                {"sigma_v2", t.sigma_v2},
                {"initial_state", vec_json(t.initial_state)},
                {"initial_measurement", vec_json(t.initial_measurement)},
                {"initial_measurement_noise", vec_json(t.initial_measurement_noise)},
                {"inputs", inputs},
                {"states", rows_json(t.states)},
                {"measurements", rows_json(t.measurements)},
                {"process_noise", rows_json(t.process_noise)},
                {"measurement_noise", rows_json(t.measurement_noise)},
                {"swaps", swaps}};
    out << rec.dump() << '\n';
  }
  if (!out) fail(ErrorKind::kFormat, "write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kInvalidArgument, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.empty()) fail(ErrorKind::kFormat, "dataset file is empty");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object()) fail(ErrorKind::kFormat, "dataset header is not JSON");
  if (header.value("format", "") != kFormatName) fail(ErrorKind::kFormat, "not a splitkf dataset file");
  if (!header.contains("version") || !header["version"].is_number_integer() ||
      header["version"].get<int>() != kDatasetFormatVersion) {
    fail(ErrorKind::kVersion, "unsupported dataset format version " +
                                  (header.contains("version") ? header["version"].dump() : "<missing>") +
                                  " (expected " + std::to_string(kDatasetFormatVersion) + ")");
  }
  Dataset ds;
  std::size_t count = 0;
  try {
    ds.scenario = scenario_from_json(header.at("scenario"));
    ds.noise = noise_spec_from_json(header.at("noise"));
    ds.association_seed = header.at("association_seed").get<std::uint64_t>();
    count = header.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("dataset header: ") + e.what());
  }
  const int M = ds.scenario.landmarks;
  const Eigen::Index n = state_dim_for(M);
  const int T = ds.scenario.steps;
  ds.trajectories.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) bad_record(i, "missing (file truncated)");
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) bad_record(i, "malformed JSON");
    try {
      if (rec.at("index").get<std::size_t>() != i) bad_record(i, "out-of-order index");
      Trajectory t;
      t.sigma_w2 = rec.at("sigma_w2").get<double>();
      t.sigma_v2 = rec.at("sigma_v2").get<double>();
      t.initial_state = json_vec(rec.at("initial_state"), n, i, "initial_state");
      t.initial_measurement = json_vec(rec.at("initial_measurement"), 2 * M, i, "initial_measurement");
      t.initial_measurement_noise =
          json_vec(rec.at("initial_measurement_noise"), 2 * M, i, "initial_measurement_noise");
      const json& inputs = rec.at("inputs");
      if (!inputs.is_array() || static_cast<int>(inputs.size()) != T) bad_record(i, "field 'inputs' has wrong length");
      for (const auto& u : inputs) {
        const Eigen::VectorXd uv = json_vec(u, 2, i, "inputs");
        t.inputs.push_back({uv(0), uv(1)});
      }
      t.states = json_rows(rec.at("states"), T, n, i, "states");
      t.measurements = json_rows(rec.at("measurements"), T, 2 * M, i, "measurements");
      t.process_noise = json_rows(rec.at("process_noise"), T, 3, i, "process_noise");
      t.measurement_noise = json_rows(rec.at("measurement_noise"), T, 2 * M, i, "measurement_noise");
      for (const auto& s : rec.at("swaps")) {
        t.swaps.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
      }
      ds.trajectories.push_back(std::move(t));
    } catch (const json::exception& e) {
      bad_record(i, e.what());
    }
  }
  if (std::getline(in, line) && !line.empty()) bad_record(count, "unexpected trailing record");
  return ds;
}

}  // namespace splitkf

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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "splitkf/noise.hpp"
#include "splitkf/slam_model.hpp"
#include "splitkf/state_space_model.hpp"

namespace splitkf {

/// Closed interval for a per-trajectory variance. lo == hi means fixed;
/// otherwise the value is drawn log-uniformly.
struct VarianceRange {
  double lo{1e-3};
  double hi{1e-3};

  bool fixed() const { return lo == hi; }
  bool operator==(const VarianceRange&) const = default;
};

struct NoiseSpec {
  VarianceRange sigma_w2;
  VarianceRange sigma_v2;
  double q2{10.0};
  double r2{1e3};

  static NoiseSpec fixed(const NoiseConfig& cfg) {
    return {{cfg.sigma_w2, cfg.sigma_w2}, {cfg.sigma_v2, cfg.sigma_v2}, cfg.q2, cfg.r2};
  }
  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

struct ScenarioConfig {
  int landmarks{5};
  int landmark_box{30};  // integer grid [-box, box]^2
  double speed{5.0};
  int steps{20};
  int trajectories{100};
  std::uint64_t seed{0};
  double p_switch{0.0};

  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

struct SwapEvent {
  int step{0};
  int first{0};
  int second{0};
  bool operator==(const SwapEvent&) const = default;
};

/// One trajectory. The agent starts at initial_state (pose at the origin)
/// and the mapping measurement initial_measurement is taken there; then for
/// t = 0..T-1, states[t] = f(prev, inputs[t]) + process_noise[t] and
/// measurements[t] = h(states[t]) + measurement_noise[t] (bearings wrapped).
struct Trajectory {
  Eigen::VectorXd initial_state;
  Eigen::VectorXd initial_measurement;
  Eigen::VectorXd initial_measurement_noise;
  std::vector<Eigen::VectorXd> states;
  std::vector<MotionInput> inputs;
  std::vector<Eigen::VectorXd> measurements;
  std::vector<Eigen::VectorXd> process_noise;
  std::vector<Eigen::VectorXd> measurement_noise;
  std::vector<SwapEvent> swaps;
  double sigma_w2{0.0};
  double sigma_v2{0.0};

  int steps() const { return static_cast<int>(states.size()); }
  NoiseConfig noise(double q2, double r2) const { return {sigma_w2, sigma_v2, q2, r2}; }
};

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  ScenarioConfig scenario;
  NoiseSpec noise;
  std::uint64_t association_seed{0};
  std::vector<Trajectory> trajectories;

  int landmarks() const { return scenario.landmarks; }
  int steps() const { return scenario.steps; }
  std::size_t size() const { return trajectories.size(); }
  NoiseConfig trajectory_noise(std::size_t i) const {
    return trajectories.at(i).noise(noise.q2, noise.r2);
  }
};

/// Deterministic in (scenario.seed, trajectory index); each trajectory draws
/// from its own stream so generation order does not matter.
Dataset generate_dataset(const ScenarioConfig& scenario, const NoiseSpec& noise);
Trajectory generate_trajectory(const ScenarioConfig& scenario, const NoiseSpec& noise,
                               std::uint32_t index);

/// Per time step, with probability p_switch swaps the (r, phi) pairs of two
/// distinct uniformly chosen landmarks. States are not touched.
Dataset inject_association_errors(Dataset ds, double p_switch, std::uint64_t seed);

/// Initial belief mean used by every filter: true initial pose, landmarks
/// from the inverse observation of the initial measurement (ranges floored
/// at kInitialRangeFloor).
inline constexpr double kInitialRangeFloor = 1e-3;
Eigen::VectorXd initial_estimate(const Trajectory& traj);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// The D1 (training) and D2 (test) scenario presets with desk-scale sizes.
nlohmann::json scenario_to_json(const ScenarioConfig& s);
ScenarioConfig scenario_from_json(const nlohmann::json& j);
nlohmann::json noise_spec_to_json(const NoiseSpec& n);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);

ScenarioConfig training_scenario(int trajectories, int steps, std::uint64_t seed);
NoiseSpec training_noise();
ScenarioConfig test_scenario(int trajectories, int steps, std::uint64_t seed);

}  // namespace splitkf

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

// Estimator evaluation and sweep experiments: one dataset per grid cell,
// every estimator run on it, one metric row per cell and estimator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitkf/dataset.hpp"
#include "splitkf/learned_filter.hpp"
#include "splitkf/metrics.hpp"
#include "splitkf/noise.hpp"

namespace splitkf {

enum class Estimator { kA1, kA2, kA3, kA4 };

std::string estimator_name(Estimator e);
Estimator estimator_from_name(const std::string& name);
bool is_learned(Estimator e);

struct EstimatorRun {
  Estimates estimates;        // empty entry for a divergent trajectory
  std::vector<std::size_t> divergent;
  double runtime_s{0.0};
};

/// EKF with the given assumed statistics; std::nullopt means each
/// trajectory's own generating statistics (exact model).
EstimatorRun run_ekf(const SlamModel& system, const Dataset& ds, const std::optional<NoiseConfig>& assumed);
/// Learned filter; batches that fail are retried one trajectory at a time.
EstimatorRun run_learned(LearnedGainFilter& filter, const Dataset& ds);

struct CellResult {
  double sweep_value{0.0};
  Estimator estimator{Estimator::kA1};
  MseReport report;
  std::size_t divergent{0};
  double runtime_s{0.0};
};

/// Sweep variables: "none", "inv_sigma_v2_db" (1/sigma_v2 in dB),
/// "r2_db" (r2 in dB), "p_switch".
struct ExperimentSpec {
  std::string name{"experiment"};
  std::vector<Estimator> estimators{Estimator::kA1, Estimator::kA2, Estimator::kA3, Estimator::kA4};
  ScenarioConfig test;
  NoiseConfig noise;
  std::string sweep{"none"};
  std::vector<double> grid{0.0};
  std::map<std::string, std::string> checkpoints;  // "A3"/"A4" -> checkpoint path
  std::uint64_t association_seed{0};

  void validate() const;
};

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& spec);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& canonical);

/// Presets of the three published result tables (test sets at L trajectories).
ExperimentSpec observation_noise_sweep(int trajectories, int steps, std::uint64_t seed);
ExperimentSpec heterogeneity_sweep(int trajectories, int steps, std::uint64_t seed);
ExperimentSpec association_sweep(int trajectories, int steps, std::uint64_t seed);

/// Noise statistics and dataset of one grid cell.
NoiseConfig cell_noise(const ExperimentSpec& spec, double value);
Dataset cell_dataset(const ExperimentSpec& spec, double value);

/// Runs every cell in grid order. Learned estimators come from `models`
/// when present, otherwise from spec.checkpoints (missing -> resolution error).
std::vector<CellResult> run_experiment(const ExperimentSpec& spec,
                                       const std::map<Estimator, LearnedGainFilter*>& models = {},
                                       const std::function<void(const CellResult&)>& progress = {});

/// CSV columns: sweep,value,estimator,mu_db,sigma_db,perfect,trajectories,
/// divergent,seed,config_hash
void write_csv(const std::vector<CellResult>& rows, const ExperimentSpec& spec, const std::filesystem::path& path);
std::string csv_text(const std::vector<CellResult>& rows, const ExperimentSpec& spec);
nlohmann::json manifest(const std::vector<CellResult>& rows, const ExperimentSpec& spec);

/// Per-step truth and estimates of one trajectory as plot-ready CSV:
/// estimator,step,kind,index,x,y (kind = pose | landmark | true_pose | true_landmark).
std::string trajectory_csv(const Trajectory& traj, const std::map<std::string, std::vector<VectorXd>>& estimates);

}  // namespace splitkf

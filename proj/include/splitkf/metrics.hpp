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

// Mean squared state error in decibels over a set of trajectories.

#include <cstddef>
#include <optional>
#include <vector>

#include "splitkf/state_space_model.hpp"

namespace splitkf {

using Estimates = std::vector<std::vector<VectorXd>>;  // [trajectory][step]

struct MseReport {
  double mu_db{0.0};     // 10 log10 of the mean over all steps of |x - x_hat|^2
  double sigma_db{0.0};  // sample std of the per-trajectory dB values
  bool perfect{false};   // error at round-off level; mu_db is not meaningful
  std::size_t trajectories{0};
  std::vector<double> per_trajectory_db;  // -inf for a trajectory without error
};

/// Mean squared errors at or below this are reported as perfect rather
/// than as a meaningless dB value (floating-point round-off of an exact run).
inline constexpr double kPerfectThreshold = 1e-20;

/// Squared error of one estimate, angle components wrapped by the model.
double squared_error(const StateSpaceModel& system, const VectorXd& truth, const VectorXd& estimate);

/// Trajectories whose entry in `estimates` is empty are skipped (they count
/// as divergent for the caller).
MseReport mse_db(const StateSpaceModel& system, const std::vector<std::vector<VectorXd>>& truth,
                 const Estimates& estimates);

}  // namespace splitkf

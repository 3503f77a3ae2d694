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

// Input features of the learned-gain filters. At step t (prior x_{t|t-1},
// measurement y_t):
//   F1  x_{t-1|t-1} - x_{t-1|t-2}      state update difference (previous step)
//   F2  x_{t-1|t-1} - x_{t-2|t-2}      state evolution difference (previous step)
//   F3  y_t - h(x_{t|t-1})             innovation
//   F4  y_t - y_{t-1}                  observation difference
//   F5  h(x_{t|t-1}) - H_t x_{t|t-1}   linearization offset
//   F6  H_t, flattened row-major
// F1, F2 and F4 are zero at the first step. Angle components of F1-F4 are
// wrapped by the state-space model.

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"

#include "splitkf/dataset.hpp"
#include "splitkf/ekf.hpp"
#include "splitkf/state_space_model.hpp"

namespace splitkf {

enum class FeatureGroup : int {
  kStateUpdate = 0,
  kStateEvolution = 1,
  kInnovation = 2,
  kObservation = 3,
  kLinearization = 4,
  kJacobian = 5,
};
inline constexpr int kFeatureGroupCount = 6;

using FeatureRouting = std::vector<FeatureGroup>;

const char* feature_group_name(FeatureGroup g);
FeatureGroup feature_group_from_name(const std::string& name);

struct RawFeatures {
  std::array<VectorXd, kFeatureGroupCount> groups;
  const VectorXd& operator[](FeatureGroup g) const { return groups[static_cast<int>(g)]; }
  VectorXd& operator[](FeatureGroup g) { return groups[static_cast<int>(g)]; }
};

Eigen::Index feature_group_size(FeatureGroup g, Eigen::Index state_dim, Eigen::Index measurement_dim);
Eigen::Index routed_size(const FeatureRouting& routing, Eigen::Index state_dim, Eigen::Index measurement_dim);

/// Carries the previous posterior/prior/measurement across a trajectory.
class FeatureExtractor {
 public:
  FeatureExtractor(const StateSpaceModel& system, const VectorXd& initial_posterior);

  int step() const { return step_; }
  const VectorXd& posterior() const { return post_; }

  /// Features for the current step given the prior, its predicted
  /// measurement, the measurement Jacobian at the prior and y_t.
  RawFeatures compute(const VectorXd& prior, const VectorXd& predicted, const MatrixXd& H,
                      const VectorXd& y) const;

  /// Records the completed step.
  void advance(const VectorXd& prior, const VectorXd& posterior, const VectorXd& y);

 private:
  const StateSpaceModel* system_;
  int step_{0};
  VectorXd post_;       // x_{t-1|t-1}
  VectorXd post_prev_;  // x_{t-2|t-2}
  VectorXd prior_prev_; // x_{t-1|t-2}
  VectorXd y_prev_;
};

/// Frozen per-component affine normalization of each feature group plus the
/// output scales used to decode network outputs into gain factors.
struct FeatureNormalization {
  std::array<VectorXd, kFeatureGroupCount> mean;
  std::array<VectorXd, kFeatureGroupCount> scale;
  VectorXd state_scale;       // spread of the prior error, per state component
  VectorXd innovation_scale;  // spread of the innovation, per measurement component

  static FeatureNormalization identity(Eigen::Index state_dim, Eigen::Index measurement_dim);

  /// Normalized concatenation of the routed groups.
  VectorXd assemble(const RawFeatures& raw, const FeatureRouting& routing) const;

  nlohmann::json to_json() const;
  static FeatureNormalization from_json(const nlohmann::json& j);
};

/// Model-agnostic view of a trajectory used by the learned filters.
struct Sequence {
  VectorXd initial_mean;
  MatrixXd initial_cov;
  std::vector<MotionInput> inputs;
  std::vector<VectorXd> measurements;
  std::vector<VectorXd> states;  // ground truth; may be empty at inference

  int steps() const { return static_cast<int>(inputs.size()); }
};

/// initial_cov follows initial_belief under `noise`.
Sequence to_sequence(const Trajectory& traj, const NoiseConfig& noise);
std::vector<Sequence> to_sequences(const Dataset& ds);

/// Statistics from running a reference EKF (model per sequence) over the
/// given sequences. Components with (near) zero spread get unit scale.
FeatureNormalization compute_normalization(const StateSpaceModel& system, std::span<const Sequence> sequences,
                                           const std::function<FilterModel(std::size_t)>& reference_model);

/// compute_normalization with each trajectory's own generating statistics.
FeatureNormalization compute_normalization(const SlamModel& system, const Dataset& ds,
                                           std::size_t max_trajectories = 0);

}  // namespace splitkf

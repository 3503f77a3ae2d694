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

#include <vector>

#include <Eigen/Dense>

#include "splitkf/dataset.hpp"
#include "splitkf/noise.hpp"
#include "splitkf/state_space_model.hpp"

namespace splitkf {

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

/// Assumed dynamics and noise statistics of an EKF.
struct FilterModel {
  const StateSpaceModel* system{nullptr};
  MatrixXd Q;
  MatrixXd R;
  double condition_cap{1e12};

  FilterModel(const StateSpaceModel& sys, MatrixXd q, MatrixXd r, double cap = 1e12);
};

/// R is built from max(sigma_v2, kMeasurementVarianceFloor) so a noiseless
/// dataset still yields an invertible innovation covariance.
inline constexpr double kMeasurementVarianceFloor = 1e-10;
FilterModel slam_filter_model(const SlamModel& system, const NoiseConfig& noise);

/// Fixed statistics used by the mismatched EKF (A2).
NoiseConfig mismatched_noise();

struct GainResult {
  MatrixXd K;
  MatrixXd S;
};

struct EkfDiagnostics {
  int psd_repairs{0};
};

GaussianBelief predict(const GaussianBelief& belief, const MotionInput& input, const FilterModel& model,
                       int step = -1);

/// K = cov H^T S^-1 through an LLT solve of S = H cov H^T + R.
GainResult kalman_gain(const MatrixXd& cov, const MatrixXd& H, const MatrixXd& R,
                       double condition_cap = 1e12);

GaussianBelief update(const GaussianBelief& prior, const VectorXd& y, const FilterModel& model,
                      int step = -1, EkfDiagnostics* diagnostics = nullptr);

struct FilterRun {
  std::vector<VectorXd> means;  // x_{t|t}, t = 0..T-1
  std::vector<double> innovation_norms;
  std::vector<double> cov_traces;
  // Filled only when requested: Sigma_{t|t-1} and S_t^-1 per step.
  std::vector<MatrixXd> prior_covs;
  std::vector<MatrixXd> innovation_cov_inverses;
  EkfDiagnostics diagnostics;
};

FilterRun run_filter(const std::vector<MotionInput>& inputs, const std::vector<VectorXd>& measurements,
                     const FilterModel& model, const GaussianBelief& init, bool record_factors = false);
FilterRun run_filter(const Trajectory& traj, const FilterModel& model, const GaussianBelief& init,
                     bool record_factors = false);

/// Shared initialization: known initial pose with covariance 1e-4 I, landmarks
/// from the inverse observation of the initial measurement, with covariance
/// propagated through the linearized inverse observation under the assumed
/// measurement statistics.
GaussianBelief initial_belief(const Trajectory& traj, const NoiseConfig& assumed);

}  // namespace splitkf

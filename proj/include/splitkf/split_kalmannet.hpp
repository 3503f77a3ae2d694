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

// Split gain filter: G = G1 H^T G2 with G1 (n x n) and G2 (m x m) emitted by
// two recurrent networks and H the analytic measurement Jacobian at the
// prior. Trained by alternating between the two parameter sets.

#include <functional>
#include <span>
#include <utility>

#include "splitkf/ekf.hpp"
#include "splitkf/learned_filter.hpp"

namespace splitkf {

struct SplitKalmanNetConfig {
  int embed_dim{64};
  int hidden_dim{64};
  nn::Activation embed_activation{nn::Activation::kTanh};
  FactorForm factor_form{FactorForm::kGram};
  // Initial output weights are scaled by head_scale and the factors start
  // near g1_init * I and g2_init * I before output scaling, i.e. diagonal
  // surrogates of the prior and innovation covariances.
  double head_scale{0.1};
  double g1_init{1.0};
  double g2_init{0.1};
  // When training from data, replace g2_init by the least-squares match of
  // the initial constant gain to reference EKF gains (calibrate_g2_init).
  // The fixed default overcounts shared pose error as landmarks are added.
  bool calibrate_g2{true};
  FeatureRouting g1_routing{FeatureGroup::kStateUpdate, FeatureGroup::kStateEvolution, FeatureGroup::kLinearization,
                            FeatureGroup::kJacobian};
  FeatureRouting g2_routing{FeatureGroup::kInnovation, FeatureGroup::kObservation, FeatureGroup::kLinearization,
                            FeatureGroup::kJacobian};
  bool joint{false};  // ablation: update both nets every epoch
};

/// Freshly initialized model (parameter streams 0 and 1).
LearnedGainFilter make_split_kalmannet(const StateSpaceModel& system, const SplitKalmanNetConfig& config,
                                       FeatureNormalization norm, std::uint64_t seed);

/// Scalar c minimizing sum_t |K_t - g1_init c Dx^2 H_t^T Dy^-2|_F^2 over
/// reference EKF runs, where Dx, Dy are the output scales of norm. This is
/// the g2_init under which the untrained filter starts closest to the EKF.
double calibrate_g2_init(const StateSpaceModel& system, std::span<const Sequence> sequences,
                         const std::function<FilterModel(std::size_t)>& reference_model,
                         const FeatureNormalization& norm, double g1_init);

/// g1 * H^T * g2.
MatrixXd compose_gain(const MatrixXd& g1, const MatrixXd& H, const MatrixXd& g2);

/// Normalized inputs of the two networks for the current step.
std::pair<VectorXd, VectorXd> features_a4(const LearnedGainFilter& filter, const VectorXd& prior,
                                          const VectorXd& y);

VectorXd filter_step_a4(LearnedGainFilter& filter, const MotionInput& input, const VectorXd& y);

/// Alternating optimization: each cycle runs one epoch on Theta1 with Theta2
/// frozen, then one epoch on Theta2 with Theta1 frozen. Stops when the
/// relative change of validation loss over a cycle falls below the
/// tolerance or after max_cycles. Keeps the best-validation parameters.
TrainingLog train_a4(LearnedGainFilter& filter, std::span<const Sequence> data, const TrainingConfig& config,
                     bool joint = false);

}  // namespace splitkf

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

// Learned full-gain filter: one recurrent network maps features F1..F4 to
// the n x m Kalman gain.

#include "splitkf/learned_filter.hpp"

namespace splitkf {

struct KalmanNetConfig {
  int embed_dim{128};
  int hidden_dim{128};
  nn::Activation embed_activation{nn::Activation::kTanh};
  double head_scale{0.1};  // initial output weights scaled so the gain starts near zero
  FeatureRouting routing{FeatureGroup::kStateUpdate, FeatureGroup::kStateEvolution, FeatureGroup::kInnovation,
                         FeatureGroup::kObservation};
};

/// Freshly initialized model (parameter stream 0).
LearnedGainFilter make_kalmannet(const StateSpaceModel& system, const KalmanNetConfig& config,
                                 FeatureNormalization norm, std::uint64_t seed);

/// Normalized network input for the current step.
VectorXd features_a3(const LearnedGainFilter& filter, const VectorXd& prior, const VectorXd& y);

/// x_{t|t} = f(x_{t-1|t-1}, u) + K(Theta) wrap(y - h(prior)).
VectorXd filter_step_a3(LearnedGainFilter& filter, const MotionInput& input, const VectorXd& y);

/// Mini-batch training of all parameters. The last validation_fraction of
/// `data` is held out; the parameters with the lowest validation loss are
/// kept.
TrainingLog train_a3(LearnedGainFilter& filter, std::span<const Sequence> data, const TrainingConfig& config);

}  // namespace splitkf

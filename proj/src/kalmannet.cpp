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

#include "splitkf/kalmannet.hpp"

#include <cmath>

#include "splitkf/error.hpp"

namespace splitkf {

LearnedGainFilter make_kalmannet(const StateSpaceModel& system, const KalmanNetConfig& config,
                                 FeatureNormalization norm, std::uint64_t seed) {
  const Eigen::Index n = system.state_dim();
  const Eigen::Index m = system.measurement_dim();
  nn::NetShape shape;
  shape.input_dim = static_cast<int>(routed_size(config.routing, n, m));
  shape.embed_dim = config.embed_dim;
  shape.hidden_dim = config.hidden_dim;
  shape.output_rows = static_cast<int>(n);
  shape.output_cols = static_cast<int>(m);
  shape.embed_activation = config.embed_activation;
  std::vector<nn::RecurrentGainNet> nets;
  nets.emplace_back(shape);
  nets[0].init_uniform(seed, 0);
  nets[0].set_head(config.head_scale, VectorXd::Zero(shape.output_size()));
  return LearnedGainFilter(system, GainArchitecture::kKalmanNet, std::move(nets), {config.routing}, std::move(norm));
}

VectorXd features_a3(const LearnedGainFilter& filter, const VectorXd& prior, const VectorXd& y) {
  require(filter.architecture() == GainArchitecture::kKalmanNet, "features_a3: not a full-gain model");
  return filter.step_features(prior, y).at(0);
}

VectorXd filter_step_a3(LearnedGainFilter& filter, const MotionInput& input, const VectorXd& y) {
  require(filter.architecture() == GainArchitecture::kKalmanNet, "filter_step_a3: not a full-gain model");
  return filter.step(input, y);
}

TrainingLog train_a3(LearnedGainFilter& filter, std::span<const Sequence> data, const TrainingConfig& config) {
  require(filter.architecture() == GainArchitecture::kKalmanNet, "train_a3: not a full-gain model");
  require(config.epochs >= 1, "train_a3: epochs must be positive");
  const auto [train, validation] = split_validation(data, config.validation_fraction);
  const std::span<const Sequence> check = validation.empty() ? train : validation;

  std::vector<nn::Adam> optimizers;
  optimizers.emplace_back(filter.nets()[0].parameter_count(), config.adam);
  TrainingLog log;
  log.initial_validation_loss = mean_loss(filter, check);
  double best = log.initial_validation_loss;
  VectorXd best_params = filter.nets()[0].parameters();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.phase = "joint";
    rec.epoch = epoch;
    rec.train_loss = train_epoch(filter, train, {true}, optimizers, config.batch_size, config.seed,
                                 static_cast<std::uint32_t>(epoch), rec.phase);
    rec.validation_loss = mean_loss(filter, check);
    if (!std::isfinite(rec.validation_loss)) {
      fail(ErrorKind::kTraining, "phase joint, epoch " + std::to_string(epoch) + ": validation loss is not finite");
    }
    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      best_params = filter.nets()[0].parameters();
    }
    if (config.log) {
      config.log("A3 epoch " + std::to_string(epoch) + " train " + std::to_string(rec.train_loss) + " validation " +
                 std::to_string(rec.validation_loss));
    }
    log.epochs.push_back(rec);
  }
  filter.nets()[0].parameters() = best_params;
  log.cycles = config.epochs;
  return log;
}

}  // namespace splitkf

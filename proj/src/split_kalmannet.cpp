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

#include "splitkf/split_kalmannet.hpp"

#include <cmath>

#include "splitkf/error.hpp"

namespace splitkf {

LearnedGainFilter make_split_kalmannet(const StateSpaceModel& system, const SplitKalmanNetConfig& config,
                                       FeatureNormalization norm, std::uint64_t seed) {
  const Eigen::Index n = system.state_dim();
  const Eigen::Index m = system.measurement_dim();
  std::vector<nn::RecurrentGainNet> nets;
  const FeatureRouting* routes[2] = {&config.g1_routing, &config.g2_routing};
  const Eigen::Index sizes[2] = {n, m};
  for (int j = 0; j < 2; ++j) {
    nn::NetShape shape;
    shape.input_dim = static_cast<int>(routed_size(*routes[j], n, m));
    shape.embed_dim = config.embed_dim;
    shape.hidden_dim = config.hidden_dim;
    shape.output_rows = shape.output_cols = static_cast<int>(sizes[j]);
    shape.embed_activation = config.embed_activation;
    nets.emplace_back(shape);
    nets.back().init_uniform(seed, static_cast<std::uint32_t>(j));
    double magnitude = j == 0 ? config.g1_init : config.g2_init;
    require(magnitude >= 0.0, "make_split_kalmannet: initial factor magnitudes must be non-negative");
    if (config.factor_form == FactorForm::kGram) magnitude = std::sqrt(magnitude);
    nets.back().set_head(config.head_scale,
                         nn::flatten_row_major(magnitude * MatrixXd::Identity(sizes[j], sizes[j])));
  }
  LearnedGainFilter filter(system, GainArchitecture::kSplit, std::move(nets), {config.g1_routing, config.g2_routing},
                           std::move(norm));
  filter.set_factor_form(config.factor_form);
  return filter;
}

double calibrate_g2_init(const StateSpaceModel& system, std::span<const Sequence> sequences,
                         const std::function<FilterModel(std::size_t)>& reference_model,
                         const FeatureNormalization& norm, double g1_init) {
  require(g1_init > 0.0, "calibrate_g2_init: g1_init must be positive");
  const VectorXd dx2 = norm.state_scale.cwiseAbs2();
  const VectorXd dy2_inv = norm.innovation_scale.cwiseAbs2().cwiseInverse();
  double cross = 0.0, self = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Sequence& seq = sequences[i];
    const FilterModel model = reference_model(i);
    GaussianBelief belief{seq.initial_mean, seq.initial_cov};
    for (int t = 0; t < seq.steps(); ++t) {
      const GaussianBelief prior = predict(belief, seq.inputs[t], model, t);
      const MatrixXd H = system.observation_jacobian(prior.mean);
      const MatrixXd K = kalman_gain(prior.cov, H, model.R, model.condition_cap).K;
      const MatrixXd base = g1_init * dx2.asDiagonal() * H.transpose() * dy2_inv.asDiagonal();
      cross += (base.array() * K.array()).sum();
      self += base.squaredNorm();
      belief = update(prior, seq.measurements[t], model, t);
    }
  }
  require(self > 0.0, "calibrate_g2_init: no reference steps");
  if (!(cross > 0.0)) fail(ErrorKind::kNumerical, "calibrate_g2_init: reference gains do not align with the scales");
  return cross / self;
}

MatrixXd compose_gain(const MatrixXd& g1, const MatrixXd& H, const MatrixXd& g2) {
  if (g1.rows() != g1.cols() || g1.cols() != H.cols() || g2.rows() != g2.cols() || g2.rows() != H.rows()) {
    fail(ErrorKind::kInvalidArgument, "compose_gain: shapes " + std::to_string(g1.rows()) + "x" +
                                          std::to_string(g1.cols()) + ", H " + std::to_string(H.rows()) + "x" +
                                          std::to_string(H.cols()) + ", " + std::to_string(g2.rows()) + "x" +
                                          std::to_string(g2.cols()) + " do not compose");
  }
  return g1 * H.transpose() * g2;
}

std::pair<VectorXd, VectorXd> features_a4(const LearnedGainFilter& filter, const VectorXd& prior,
                                          const VectorXd& y) {
  require(filter.architecture() == GainArchitecture::kSplit, "features_a4: not a split-gain model");
  auto f = filter.step_features(prior, y);
  return {std::move(f[0]), std::move(f[1])};
}

VectorXd filter_step_a4(LearnedGainFilter& filter, const MotionInput& input, const VectorXd& y) {
  require(filter.architecture() == GainArchitecture::kSplit, "filter_step_a4: not a split-gain model");
  return filter.step(input, y);
}

TrainingLog train_a4(LearnedGainFilter& filter, std::span<const Sequence> data, const TrainingConfig& config,
                     bool joint) {
  require(filter.architecture() == GainArchitecture::kSplit, "train_a4: not a split-gain model");
  require(config.max_cycles >= 1, "train_a4: max_cycles must be positive");
  const auto [train, validation] = split_validation(data, config.validation_fraction);
  const std::span<const Sequence> check = validation.empty() ? train : validation;

  std::vector<nn::Adam> optimizers;
  for (const auto& net : filter.nets()) optimizers.emplace_back(net.parameter_count(), config.adam);
  TrainingLog log;
  log.initial_validation_loss = mean_loss(filter, check);
  double best = log.initial_validation_loss;
  std::vector<VectorXd> best_params{filter.nets()[0].parameters(), filter.nets()[1].parameters()};
  double previous = log.initial_validation_loss;

  struct Phase {
    const char* name;
    std::vector<bool> trainable;
  };
  const std::vector<Phase> phases =
      joint ? std::vector<Phase>{{"joint", {true, true}}}
            : std::vector<Phase>{{"theta1", {true, false}}, {"theta2", {false, true}}};
  std::uint32_t epoch_index = 0;
  for (int cycle = 0; cycle < config.max_cycles; ++cycle) {
    for (const Phase& phase : phases) {
      EpochRecord rec;
      rec.phase = phase.name;
      rec.cycle = cycle;
      rec.epoch = static_cast<int>(epoch_index);
      rec.train_loss = train_epoch(filter, train, phase.trainable, optimizers, config.batch_size, config.seed,
                                   epoch_index, rec.phase);
      rec.validation_loss = mean_loss(filter, check);
      if (!std::isfinite(rec.validation_loss)) {
        fail(ErrorKind::kTraining, "phase " + rec.phase + ", epoch " + std::to_string(epoch_index) +
                                       ": validation loss is not finite");
      }
      if (rec.validation_loss < best) {
        best = rec.validation_loss;
        best_params = {filter.nets()[0].parameters(), filter.nets()[1].parameters()};
      }
      if (config.log) {
        config.log("A4 cycle " + std::to_string(cycle) + " " + rec.phase + " train " +
                   std::to_string(rec.train_loss) + " validation " + std::to_string(rec.validation_loss));
      }
      log.epochs.push_back(rec);
      ++epoch_index;
    }
    log.cycles = cycle + 1;
    const double current = log.epochs.back().validation_loss;
    const double change = std::abs(previous - current) / std::max(std::abs(previous), 1e-300);
    previous = current;
    if (change < config.convergence_tolerance) {
      log.converged = true;
      break;
    }
  }
  filter.nets()[0].parameters() = best_params[0];
  filter.nets()[1].parameters() = best_params[1];
  return log;
}

}  // namespace splitkf

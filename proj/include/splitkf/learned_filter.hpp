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

// Shared machinery of the learned-gain filters. Both keep the model-based
// prediction x_{t|t-1} = f(x_{t-1|t-1}, u_t) and correct it with a gain
// produced from recurrent networks:
//   kKalmanNet: K = Dx * N(F1..F4) * Dy^-1
//   kSplit:     K = G1 H^T G2,  G1 = Dx N1 Dx,  G2 = Dy^-1 N2 Dy^-1
// where Dx, Dy are the frozen output scales. No covariance is propagated.
// Gradients are exact reverse-mode derivatives of the trajectory loss,
// including the paths through the features and through H_t.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitkf/features.hpp"
#include "splitkf/neural.hpp"
#include "splitkf/state_space_model.hpp"

namespace splitkf {

enum class GainArchitecture { kKalmanNet, kSplit };

/// How a split factor is read from its network output N:
///   kLinear: G = D N D          kGram: G = D N N^T D (positive semidefinite)
enum class FactorForm { kLinear, kGram };

const char* factor_form_name(FactorForm form);
FactorForm factor_form_from_name(const std::string& name);

std::string architecture_tag(GainArchitecture arch);  // "A3" / "A4"

class LearnedGainFilter {
 public:
  /// Decoded gain factors for one step: {K} or {G1, G2}.
  using Factors = std::vector<MatrixXd>;
  /// Replaces the networks' factors (used for injection checks).
  using FactorSource =
      std::function<Factors(std::size_t sequence, int step, const VectorXd& prior, const MatrixXd& H)>;

  LearnedGainFilter(const StateSpaceModel& system, GainArchitecture arch, std::vector<nn::RecurrentGainNet> nets,
                    std::vector<FeatureRouting> routing, FeatureNormalization norm);

  GainArchitecture architecture() const { return arch_; }
  const StateSpaceModel& system() const { return *system_; }
  std::vector<nn::RecurrentGainNet>& nets() { return nets_; }
  const std::vector<nn::RecurrentGainNet>& nets() const { return nets_; }
  const std::vector<FeatureRouting>& routing() const { return routing_; }
  const FeatureNormalization& normalization() const { return norm_; }
  void set_normalization(FeatureNormalization norm);
  FactorForm factor_form() const { return form_; }
  void set_factor_form(FactorForm form) { form_ = form; }

  /// Raw row-major network matrices to decoded factors.
  Factors decode(const std::vector<MatrixXd>& raw) const;
  /// Gain from decoded factors and the measurement Jacobian.
  MatrixXd compose(const Factors& factors, const MatrixXd& H) const;

  struct PassOptions {
    bool want_gradient{false};
    std::vector<bool> trainable;  // per net; empty means all
    bool keep_estimates{false};
    bool want_gain_adjoints{false};
    const FactorSource* source{nullptr};
  };

  struct Pass {
    double loss{0.0};  // mean over the batch of per-trajectory mean squared error
    std::vector<VectorXd> gradients;                      // per net
    std::vector<std::vector<VectorXd>> estimates;         // [sequence][step]
    std::vector<std::vector<MatrixXd>> gain_adjoints;     // [sequence][step] dLoss/dK_t
  };

  /// Runs a batch of equal-length sequences in lockstep. Sequences need
  /// ground-truth states unless only estimates are requested.
  Pass evaluate(std::span<const Sequence* const> batch, const PassOptions& options);

  std::vector<VectorXd> run(const Sequence& seq);
  std::vector<std::vector<VectorXd>> run_all(std::span<const Sequence> seqs, std::size_t batch_size = 64);

  /// Step-by-step use: begin() resets hidden states and the feature context.
  void begin(const VectorXd& initial_mean);
  /// Network inputs for the current step, one vector per net (normalized).
  std::vector<VectorXd> step_features(const VectorXd& prior, const VectorXd& y) const;
  /// One predict/correct step; returns the posterior mean.
  VectorXd step(const MotionInput& input, const VectorXd& y);

 private:
  const StateSpaceModel* system_;
  GainArchitecture arch_;
  std::vector<nn::RecurrentGainNet> nets_;
  std::vector<FeatureRouting> routing_;
  FeatureNormalization norm_;
  FactorForm form_{FactorForm::kLinear};
  std::optional<FeatureExtractor> online_;
};

struct TrainingConfig {
  int epochs{30};
  int batch_size{32};
  nn::AdamConfig adam{};
  double validation_fraction{0.1};
  std::uint64_t seed{0};
  int max_cycles{30};              // alternating training only
  double convergence_tolerance{1e-3};
  std::size_t normalization_trajectories{500};
  std::function<void(const std::string&)> log;
};

struct EpochRecord {
  std::string phase;  // "joint", "theta1" or "theta2"
  int cycle{0};
  int epoch{0};
  double train_loss{0.0};
  double validation_loss{0.0};
};

struct TrainingLog {
  double initial_validation_loss{0.0};
  std::vector<EpochRecord> epochs;
  int cycles{0};
  bool converged{false};
};

/// Mean loss over sequences (no gradient), in batches.
double mean_loss(LearnedGainFilter& filter, std::span<const Sequence> seqs, std::size_t batch_size = 64);

/// One shuffled pass of mini-batch updates over `train` for the nets marked
/// trainable; returns the mean training loss. Nets that are not trainable are
/// left bit-identical.
double train_epoch(LearnedGainFilter& filter, std::span<const Sequence> train, const std::vector<bool>& trainable,
                   std::vector<nn::Adam>& optimizers, int batch_size, std::uint64_t seed, std::uint32_t epoch_index,
                   const std::string& phase);

/// Deterministic split: the last ceil(fraction * L) sequences validate.
std::pair<std::span<const Sequence>, std::span<const Sequence>> split_validation(std::span<const Sequence> all,
                                                                                 double fraction);

nn::Checkpoint to_checkpoint(const LearnedGainFilter& filter, const nlohmann::json& extra = {});
LearnedGainFilter from_checkpoint(const StateSpaceModel& system, const nn::Checkpoint& ckpt);

}  // namespace splitkf

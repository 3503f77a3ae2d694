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

#include "splitkf/features.hpp"

#include <cmath>

#include "splitkf/error.hpp"
#include "splitkf/neural.hpp"

namespace splitkf {

namespace {

constexpr std::array<const char*, kFeatureGroupCount> kGroupNames = {
    "state_update", "state_evolution", "innovation", "observation", "linearization", "jacobian"};

constexpr double kMinSpread = 1e-9;

VectorXd spread_or_unit(const VectorXd& sum, const VectorXd& sumsq, double count, VectorXd* mean_out) {
  const VectorXd mean = sum / count;
  VectorXd var = (sumsq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
  VectorXd sd = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < sd.size(); ++i) {
    if (!(sd(i) > kMinSpread)) sd(i) = 1.0;
  }
  if (mean_out) *mean_out = mean;
  return sd;
}

nlohmann::json to_json_vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd from_json_vec(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

const char* feature_group_name(FeatureGroup g) { return kGroupNames[static_cast<int>(g)]; }

FeatureGroup feature_group_from_name(const std::string& name) {
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    if (name == kGroupNames[g] || name == "F" + std::to_string(g + 1)) return static_cast<FeatureGroup>(g);
  }
  fail(ErrorKind::kUsage, "unknown feature group '" + name + "'");
}

Eigen::Index feature_group_size(FeatureGroup g, Eigen::Index n, Eigen::Index m) {
  switch (g) {
    case FeatureGroup::kStateUpdate:
    case FeatureGroup::kStateEvolution: return n;
    case FeatureGroup::kInnovation:
    case FeatureGroup::kObservation:
    case FeatureGroup::kLinearization: return m;
    case FeatureGroup::kJacobian: return m * n;
  }
  return 0;
}

Eigen::Index routed_size(const FeatureRouting& routing, Eigen::Index n, Eigen::Index m) {
  Eigen::Index total = 0;
  for (FeatureGroup g : routing) total += feature_group_size(g, n, m);
  return total;
}

FeatureExtractor::FeatureExtractor(const StateSpaceModel& system, const VectorXd& initial_posterior)
    : system_(&system), post_(initial_posterior), post_prev_(initial_posterior) {}

RawFeatures FeatureExtractor::compute(const VectorXd& prior, const VectorXd& predicted, const MatrixXd& H,
                                      const VectorXd& y) const {
  const Eigen::Index n = system_->state_dim();
  const Eigen::Index m = system_->measurement_dim();
  RawFeatures f;
  if (step_ == 0) {
    f[FeatureGroup::kStateUpdate] = VectorXd::Zero(n);
    f[FeatureGroup::kStateEvolution] = VectorXd::Zero(n);
    f[FeatureGroup::kObservation] = VectorXd::Zero(m);
  } else {
    f[FeatureGroup::kStateUpdate] = system_->state_difference(post_, prior_prev_);
    f[FeatureGroup::kStateEvolution] = system_->state_difference(post_, post_prev_);
    f[FeatureGroup::kObservation] = system_->measurement_difference(y, y_prev_);
  }
  f[FeatureGroup::kInnovation] = system_->measurement_difference(y, predicted);
  f[FeatureGroup::kLinearization] = predicted - H * prior;
  f[FeatureGroup::kJacobian] = nn::flatten_row_major(H);
  return f;
}

void FeatureExtractor::advance(const VectorXd& prior, const VectorXd& posterior, const VectorXd& y) {
  post_prev_ = post_;
  post_ = posterior;
  prior_prev_ = prior;
  y_prev_ = y;
  ++step_;
}

FeatureNormalization FeatureNormalization::identity(Eigen::Index n, Eigen::Index m) {
  FeatureNormalization norm;
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    const Eigen::Index size = feature_group_size(static_cast<FeatureGroup>(g), n, m);
    norm.mean[g] = VectorXd::Zero(size);
    norm.scale[g] = VectorXd::Ones(size);
  }
  norm.state_scale = VectorXd::Ones(n);
  norm.innovation_scale = VectorXd::Ones(m);
  return norm;
}

VectorXd FeatureNormalization::assemble(const RawFeatures& raw, const FeatureRouting& routing) const {
  Eigen::Index total = 0;
  for (FeatureGroup g : routing) total += raw[g].size();
  VectorXd out(total);
  Eigen::Index offset = 0;
  for (FeatureGroup g : routing) {
    const int k = static_cast<int>(g);
    const Eigen::Index size = raw[g].size();
    out.segment(offset, size) = (raw[g] - mean[k]).cwiseQuotient(scale[k]);
    offset += size;
  }
  return out;
}

nlohmann::json FeatureNormalization::to_json() const {
  nlohmann::json j;
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    j["groups"][kGroupNames[g]] = {{"mean", to_json_vec(mean[g])}, {"scale", to_json_vec(scale[g])}};
  }
  j["state_scale"] = to_json_vec(state_scale);
  j["innovation_scale"] = to_json_vec(innovation_scale);
  return j;
}

FeatureNormalization FeatureNormalization::from_json(const nlohmann::json& j) {
  FeatureNormalization norm;
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    const auto& entry = j.at("groups").at(kGroupNames[g]);
    norm.mean[g] = from_json_vec(entry.at("mean"));
    norm.scale[g] = from_json_vec(entry.at("scale"));
  }
  norm.state_scale = from_json_vec(j.at("state_scale"));
  norm.innovation_scale = from_json_vec(j.at("innovation_scale"));
  return norm;
}

Sequence to_sequence(const Trajectory& traj, const NoiseConfig& noise) {
  const GaussianBelief init = initial_belief(traj, noise);
  return {init.mean, init.cov, traj.inputs, traj.measurements, traj.states};
}

std::vector<Sequence> to_sequences(const Dataset& ds) {
  std::vector<Sequence> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(to_sequence(ds.trajectories[i], ds.trajectory_noise(i)));
  return out;
}

FeatureNormalization compute_normalization(const StateSpaceModel& system, std::span<const Sequence> sequences,
                                           const std::function<FilterModel(std::size_t)>& reference_model) {
  const Eigen::Index n = system.state_dim();
  const Eigen::Index m = system.measurement_dim();
  std::array<VectorXd, kFeatureGroupCount> sum, sumsq;
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    const Eigen::Index size = feature_group_size(static_cast<FeatureGroup>(g), n, m);
    sum[g] = VectorXd::Zero(size);
    sumsq[g] = VectorXd::Zero(size);
  }
  VectorXd err_sum = VectorXd::Zero(n), err_sumsq = VectorXd::Zero(n);
  double count = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Sequence& seq = sequences[i];
    const FilterModel model = reference_model(i);
    GaussianBelief belief{seq.initial_mean, seq.initial_cov};
    FeatureExtractor extractor(system, seq.initial_mean);
    for (int t = 0; t < seq.steps(); ++t) {
      const GaussianBelief prior = predict(belief, seq.inputs[t], model, t);
      const VectorXd predicted = system.observe(prior.mean);
      const MatrixXd H = system.observation_jacobian(prior.mean);
      const RawFeatures f = extractor.compute(prior.mean, predicted, H, seq.measurements[t]);
      belief = update(prior, seq.measurements[t], model, t);
      extractor.advance(prior.mean, belief.mean, seq.measurements[t]);
      for (int g = 0; g < kFeatureGroupCount; ++g) {
        sum[g] += f.groups[g];
        sumsq[g] += f.groups[g].cwiseProduct(f.groups[g]);
      }
      if (!seq.states.empty()) {
        const VectorXd e = system.state_difference(seq.states[t], prior.mean);
        err_sum += e;
        err_sumsq += e.cwiseProduct(e);
      }
      count += 1.0;
    }
  }
  require(count > 0.0, "compute_normalization: no steps to collect statistics from");
  FeatureNormalization norm;
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    norm.scale[g] = spread_or_unit(sum[g], sumsq[g], count, &norm.mean[g]);
  }
  // Scales are root-mean-square values (not centered): they set magnitudes.
  norm.state_scale = VectorXd::Ones(n);
  if (err_sumsq.sum() > 0.0) {
    norm.state_scale = (err_sumsq / count).cwiseSqrt();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(norm.state_scale(i) > kMinSpread)) norm.state_scale(i) = 1.0;
    }
  }
  const int innovation = static_cast<int>(FeatureGroup::kInnovation);
  norm.innovation_scale = (sumsq[innovation] / count).cwiseSqrt();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(norm.innovation_scale(i) > kMinSpread)) norm.innovation_scale(i) = 1.0;
  }
  return norm;
}

FeatureNormalization compute_normalization(const SlamModel& system, const Dataset& ds,
                                           std::size_t max_trajectories) {
  const std::size_t count =
      max_trajectories == 0 ? ds.size() : std::min(ds.size(), max_trajectories);
  std::vector<Sequence> seqs;
  seqs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) seqs.push_back(to_sequence(ds.trajectories[i], ds.trajectory_noise(i)));
  return compute_normalization(system, seqs, [&](std::size_t i) {
    return slam_filter_model(system, ds.trajectory_noise(i));
  });
}

}  // namespace splitkf

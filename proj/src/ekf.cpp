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

#include "splitkf/ekf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace splitkf {

namespace {

constexpr double kInitialPoseVariance = 1e-4;

std::string at_step(int step) { return step >= 0 ? " at step " + std::to_string(step) : std::string(); }

void check_belief(const GaussianBelief& b, int step, const char* stage) {
  if (!b.mean.allFinite() || !b.cov.allFinite()) {
    fail(ErrorKind::kDivergence, std::string(stage) + " produced non-finite values" + at_step(step));
  }
}

// Symmetrize, then clip negative eigenvalues if the result is not PSD.
void repair_covariance(MatrixXd& cov, EkfDiagnostics* diagnostics) {
  cov = 0.5 * (cov + cov.transpose()).eval();
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() >= 0.0) return;
  const VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  cov = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  if (diagnostics) ++diagnostics->psd_repairs;
}

}  // namespace

FilterModel::FilterModel(const StateSpaceModel& sys, MatrixXd q, MatrixXd r, double cap)
    : system(&sys), Q(std::move(q)), R(std::move(r)), condition_cap(cap) {
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.measurement_dim();
  require(Q.rows() == n && Q.cols() == n, "FilterModel: Q shape does not match the state dimension");
  require(R.rows() == m && R.cols() == m, "FilterModel: R shape does not match the measurement dimension");
}

FilterModel slam_filter_model(const SlamModel& system, const NoiseConfig& noise) {
  NoiseConfig floored = noise;
  floored.sigma_v2 = std::max(noise.sigma_v2, kMeasurementVarianceFloor);
  return FilterModel(system, build_Q(floored, system.landmarks()), build_R(floored, system.landmarks()));
}

NoiseConfig mismatched_noise() { return {1e-3, 1e-3, 10.0, 1e2}; }

GaussianBelief predict(const GaussianBelief& belief, const MotionInput& input, const FilterModel& model,
                       int step) {
  const StateSpaceModel& sys = *model.system;
  require(belief.mean.size() == sys.state_dim(), "predict: belief dimension mismatch");
  const MatrixXd F = sys.transition_jacobian(belief.mean, input);
  GaussianBelief out;
  out.mean = sys.transition(belief.mean, input);
  out.cov = F * belief.cov * F.transpose() + model.Q;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  check_belief(out, step, "predict");
  return out;
}

GainResult kalman_gain(const MatrixXd& cov, const MatrixXd& H, const MatrixXd& R, double condition_cap) {
  require(H.cols() == cov.rows() && R.rows() == H.rows() && R.cols() == H.rows(),
          "kalman_gain: shape mismatch");
  GainResult g;
  g.S = H * cov * H.transpose() + R;
  g.S = 0.5 * (g.S + g.S.transpose()).eval();
  Eigen::LLT<MatrixXd> llt(g.S);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::kNumerical, "kalman_gain: innovation covariance is not positive definite");
  }
  const double rcond = llt.rcond();
  if (!(rcond > 0.0) || 1.0 / rcond > condition_cap) {
    fail(ErrorKind::kNumerical, "kalman_gain: innovation covariance condition estimate " +
                                    std::to_string(rcond > 0.0 ? 1.0 / rcond : INFINITY) + " exceeds cap " +
                                    std::to_string(condition_cap));
  }
  g.K = llt.solve(H * cov).transpose();
  return g;
}

GaussianBelief update(const GaussianBelief& prior, const VectorXd& y, const FilterModel& model, int step,
                      EkfDiagnostics* diagnostics) {
  const StateSpaceModel& sys = *model.system;
  require(y.size() == sys.measurement_dim(), "update: measurement dimension mismatch");
  const MatrixXd H = sys.observation_jacobian(prior.mean);
  const VectorXd innovation = sys.measurement_difference(y, sys.observe(prior.mean));
  const GainResult g = kalman_gain(prior.cov, H, model.R, model.condition_cap);
  GaussianBelief post;
  post.mean = prior.mean + g.K * innovation;
  sys.normalize_state(post.mean);
  post.cov = prior.cov - g.K * g.S * g.K.transpose();
  repair_covariance(post.cov, diagnostics);
  check_belief(post, step, "update");
  return post;
}

FilterRun run_filter(const std::vector<MotionInput>& inputs, const std::vector<VectorXd>& measurements,
                     const FilterModel& model, const GaussianBelief& init, bool record_factors) {
  require(inputs.size() == measurements.size(), "run_filter: inputs and measurements differ in length");
  const StateSpaceModel& sys = *model.system;
  require(init.mean.size() == sys.state_dim() && init.cov.rows() == sys.state_dim(),
          "run_filter: initial belief dimension mismatch");
  FilterRun run;
  const std::size_t T = inputs.size();
  run.means.reserve(T);
  GaussianBelief belief = init;
  for (std::size_t t = 0; t < T; ++t) {
    const int step = static_cast<int>(t);
    try {
      const GaussianBelief prior = predict(belief, inputs[t], model, step);
      const VectorXd innovation = sys.measurement_difference(measurements[t], sys.observe(prior.mean));
      if (record_factors) {
        const MatrixXd H = sys.observation_jacobian(prior.mean);
        const MatrixXd S = H * prior.cov * H.transpose() + model.R;
        run.prior_covs.push_back(prior.cov);
        run.innovation_cov_inverses.push_back(
            (0.5 * (S + S.transpose())).llt().solve(MatrixXd::Identity(S.rows(), S.cols())));
      }
      belief = update(prior, measurements[t], model, step, &run.diagnostics);
      run.innovation_norms.push_back(innovation.norm());
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (msg.find("at step") != std::string::npos) throw;
      throw Error(e.kind(), msg + at_step(step));
    }
    run.cov_traces.push_back(belief.cov.trace());
    run.means.push_back(belief.mean);
  }
  return run;
}

FilterRun run_filter(const Trajectory& traj, const FilterModel& model, const GaussianBelief& init,
                     bool record_factors) {
  return run_filter(traj.inputs, traj.measurements, model, init, record_factors);
}

GaussianBelief initial_belief(const Trajectory& traj, const NoiseConfig& assumed) {
  GaussianBelief b;
  b.mean = initial_estimate(traj);
  const Eigen::Index n = b.mean.size();
  const int M = landmark_count_for(n);
  const double range_var = std::max(assumed.sigma_v2, kMeasurementVarianceFloor) * assumed.r2;
  const double bearing_var = std::max(assumed.sigma_v2, kMeasurementVarianceFloor);
  // Linearized inverse observation: l = p + r [cos(th + phi), sin(th + phi)].
  MatrixXd G = MatrixXd::Zero(n, kPoseDim);
  G.topRows(kPoseDim).setIdentity();
  MatrixXd Z = MatrixXd::Zero(n, 2 * M);
  const double theta = b.mean(2);
  for (int m = 0; m < M; ++m) {
    const double r = std::max(traj.initial_measurement(2 * m), kInitialRangeFloor);
    const double a = theta + traj.initial_measurement(2 * m + 1);
    const double c = std::cos(a), s = std::sin(a);
    const Eigen::Index row = kPoseDim + 2 * m;
    G.block(row, 0, 2, kPoseDim) << 1.0, 0.0, -r * s, 0.0, 1.0, r * c;
    Z.block(row, 2 * m, 2, 2) << c * std::sqrt(range_var), -r * s * std::sqrt(bearing_var),
        s * std::sqrt(range_var), r * c * std::sqrt(bearing_var);
  }
  b.cov = kInitialPoseVariance * G * G.transpose() + Z * Z.transpose();
  b.cov = 0.5 * (b.cov + b.cov.transpose());
  return b;
}

}  // namespace splitkf

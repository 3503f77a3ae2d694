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


#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "splitkf/dataset.hpp"
#include "splitkf/ekf.hpp"

using namespace splitkf;

namespace {

struct LinearCase {
  oracle::LinearGaussian lg;
  std::vector<Eigen::Vector2d> u;
  std::vector<MotionInput> inputs;
  std::vector<VectorXd> ys;
  VectorXd x0;
  MatrixXd P0;
};

// Random stable linear-Gaussian system with simulated measurements.
LinearCase linear_case(std::uint64_t seed, int n, int m, int T) {
  RandomStream rng(seed, 0);
  LinearCase c;
  MatrixXd A = oracle::random_matrix(rng, n, n);
  A *= 0.95 / Eigen::JacobiSVD<MatrixXd>(A).singularValues()(0);
  c.lg = {A, oracle::random_matrix(rng, n, 2), oracle::random_matrix(rng, m, n), 0.1 * oracle::random_spd(rng, n),
          oracle::random_spd(rng, m)};
  c.x0 = oracle::random_matrix(rng, n, 1);
  c.P0 = oracle::random_spd(rng, n, 1.0);
  VectorXd x = c.x0;
  const Eigen::LLT<MatrixXd> lq(c.lg.Q), lr(c.lg.R);
  for (int t = 0; t < T; ++t) {
    c.u.emplace_back(rng.normal(), rng.normal());
    c.inputs.push_back({c.u.back()(0), c.u.back()(1)});
    x = A * x + c.lg.B * c.u.back() + MatrixXd(lq.matrixL()) * oracle::random_matrix(rng, n, 1);
    c.ys.push_back(c.lg.C * x + MatrixXd(lr.matrixL()) * oracle::random_matrix(rng, m, 1));
  }
  return c;
}

}  // namespace

TEST_CASE("EKF on a linear model equals the closed-form Kalman filter") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const LinearCase c = linear_case(seed, 4, 3, 100);
    const LinearModel sys(c.lg.A, c.lg.B, c.lg.C);
    const FilterModel model(sys, c.lg.Q, c.lg.R);
    const FilterRun run = run_filter(c.inputs, c.ys, model, {c.x0, c.P0});
    const oracle::KalmanTrace ref = oracle::linear_kalman(c.lg, c.x0, c.P0, c.u, c.ys);
    double worst = 0;
    for (int t = 0; t < 100; ++t) worst = std::max(worst, (run.means[t] - ref.means[t]).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-10);
    CHECK(run.diagnostics.psd_repairs == 0);
  }
}

TEST_CASE("recorded factors reproduce the gain") {
  const LinearCase c = linear_case(4, 5, 2, 20);
  const LinearModel sys(c.lg.A, c.lg.B, c.lg.C);
  const FilterModel model(sys, c.lg.Q, c.lg.R);
  const FilterRun run = run_filter(c.inputs, c.ys, model, {c.x0, c.P0}, true);
  REQUIRE(run.prior_covs.size() == 20);
  for (int t = 0; t < 20; ++t) {
    const MatrixXd K = kalman_gain(run.prior_covs[t], c.lg.C, c.lg.R).K;
    const MatrixXd K2 = run.prior_covs[t] * c.lg.C.transpose() * run.innovation_cov_inverses[t];
    CHECK(oracle::relative_error(K2, K) < 1e-12);
  }
}

TEST_CASE("gain solve matches the explicit inverse") {
  RandomStream rng(5, 5);
  const MatrixXd P = oracle::random_spd(rng, 7);
  const MatrixXd H = oracle::random_matrix(rng, 4, 7);
  const MatrixXd R = oracle::random_spd(rng, 4);
  const GainResult g = kalman_gain(P, H, R);
  const MatrixXd S = H * P * H.transpose() + R;
  CHECK(oracle::relative_error(g.K, P * H.transpose() * S.inverse()) < 1e-12);
  CHECK(oracle::relative_error(g.S, S) < 1e-14);
}

TEST_CASE("singular or ill-conditioned innovation covariance is a numerical error") {
  const MatrixXd P = MatrixXd::Identity(2, 2);
  const MatrixXd H = MatrixXd::Identity(2, 2);
  try {
    kalman_gain(P, H, -2.0 * MatrixXd::Identity(2, 2));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumerical);
  }
  MatrixXd Pbad = MatrixXd::Zero(2, 2);
  Pbad(0, 0) = 1e6;
  MatrixXd R = 1e-9 * MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(kalman_gain(Pbad, H, R, 1e12), Error);
}

TEST_CASE("exact-model EKF on clean SLAM data stays on the truth") {
  const Dataset ds = generate_dataset(test_scenario(5, 30, 3), NoiseSpec::fixed({0.0, 0.0, 1.0, 1.0}));
  const SlamModel sys(5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    const FilterRun run = run_filter(t, slam_filter_model(sys, ds.trajectory_noise(i)), initial_belief(t, ds.trajectory_noise(i)));
    for (int k = 0; k < t.steps(); ++k) CHECK(state_difference(run.means[k], t.states[k]).norm() < 1e-8);
  }
}

TEST_CASE("EKF covariance stays symmetric PSD and shrinks the landmark uncertainty") {
  const Dataset ds = generate_dataset(test_scenario(10, 50, 5), NoiseSpec::fixed({1e-3, 1e-3, 10.0, 1e3}));
  const SlamModel sys(5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    const FilterModel model = slam_filter_model(sys, ds.trajectory_noise(i));
    GaussianBelief b = initial_belief(t, ds.trajectory_noise(i));
    const double start = b.cov.bottomRightCorner(10, 10).trace();
    for (int k = 0; k < t.steps(); ++k) {
      b = update(predict(b, t.inputs[k], model, k), t.measurements[k], model, k);
      CHECK((b.cov - b.cov.transpose()).norm() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(b.cov).eigenvalues().minCoeff() > -1e-12);
    }
    CHECK(b.cov.bottomRightCorner(10, 10).trace() < start);
  }
}

TEST_CASE("initial belief: known pose, landmarks from the first measurement") {
  const Dataset ds = generate_dataset(test_scenario(3, 2, 9), NoiseSpec::fixed({1e-3, 1e-3, 10.0, 1e3}));
  const Trajectory& t = ds.trajectories[0];
  const GaussianBelief b = initial_belief(t, ds.trajectory_noise(0));
  CHECK(b.mean.head<3>() == t.initial_state.head<3>());
  const VectorXd y = measure(b.mean);
  CHECK(measurement_difference(y, t.initial_measurement).norm() < 1e-9);
  CHECK(b.cov(0, 0) == doctest::Approx(1e-4));
  CHECK(Eigen::LLT<MatrixXd>(b.cov).info() == Eigen::Success);
  // Range variance dominates along the line of sight.
  const Eigen::Vector2d los = (t.initial_state.segment<2>(3) - t.initial_state.head<2>()).normalized();
  const Eigen::Matrix2d C = b.cov.block<2, 2>(3, 3);
  CHECK(los.dot(C * los) > 1.0);
}

TEST_CASE("mismatched statistics differ from the exact ones") {
  const NoiseConfig mm = mismatched_noise();
  CHECK(mm.sigma_w2 == 1e-3);
  CHECK(mm.sigma_v2 == 1e-3);
  CHECK(mm.q2 == 10.0);
  CHECK(mm.r2 == 100.0);
  const SlamModel sys(2);
  const FilterModel fm = slam_filter_model(sys, NoiseConfig{0.0, 0.0, 1.0, 1.0});
  CHECK(fm.R(1, 1) == kMeasurementVarianceFloor);
  CHECK_THROWS_AS(FilterModel(sys, MatrixXd::Identity(3, 3), fm.R), Error);
}

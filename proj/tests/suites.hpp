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

// Measured quantities behind the deterministic acceptance criteria. Each
// function returns the worst error it observed so callers can compare it
// against their own tolerance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "splitkf/dataset.hpp"
#include "splitkf/ekf.hpp"
#include "splitkf/kalmannet.hpp"
#include "splitkf/split_kalmannet.hpp"

namespace splitkf::suites {

using Factors = LearnedGainFilter::Factors;

inline std::vector<const Sequence*> pointers(const std::vector<Sequence>& seqs) {
  std::vector<const Sequence*> out;
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

inline double loss_of(LearnedGainFilter& f, const std::vector<const Sequence*>& batch,
                      const LearnedGainFilter::FactorSource* source = nullptr) {
  LearnedGainFilter::PassOptions o;
  o.source = source;
  return f.evaluate(batch, o).loss;
}

// ---- linear-Gaussian oracle -------------------------------------------------

// Max abs difference between the EKF and the closed-form filter on a random
// stable linear-Gaussian system.
inline double linear_oracle_error(std::uint64_t seed, int steps = 100, int n = 4, int m = 3) {
  RandomStream rng(seed, 0);
  MatrixXd A = oracle::random_matrix(rng, n, n);
  A *= 0.95 / Eigen::JacobiSVD<MatrixXd>(A).singularValues()(0);
  const oracle::LinearGaussian lg{A, oracle::random_matrix(rng, n, 2), oracle::random_matrix(rng, m, n),
                                  0.1 * oracle::random_spd(rng, n), oracle::random_spd(rng, m)};
  const VectorXd x0 = oracle::random_matrix(rng, n, 1);
  const MatrixXd P0 = oracle::random_spd(rng, n, 1.0);
  const Eigen::LLT<MatrixXd> lq(lg.Q), lr(lg.R);
  std::vector<Eigen::Vector2d> u;
  std::vector<MotionInput> inputs;
  std::vector<VectorXd> ys;
  VectorXd x = x0;
  for (int t = 0; t < steps; ++t) {
    u.emplace_back(rng.normal(), rng.normal());
    inputs.push_back({u.back()(0), u.back()(1)});
    x = A * x + lg.B * u.back() + MatrixXd(lq.matrixL()) * oracle::random_matrix(rng, n, 1);
    ys.push_back(lg.C * x + MatrixXd(lr.matrixL()) * oracle::random_matrix(rng, m, 1));
  }
  const LinearModel sys(lg.A, lg.B, lg.C);
  const FilterRun run = run_filter(inputs, ys, FilterModel(sys, lg.Q, lg.R), {x0, P0});
  const oracle::KalmanTrace ref = oracle::linear_kalman(lg, x0, P0, u, ys);
  double worst = 0;
  for (int t = 0; t < steps; ++t) worst = std::max(worst, (run.means[t] - ref.means[t]).cwiseAbs().maxCoeff());
  return worst;
}

// ---- factor injection ------------------------------------------------------

// Max abs state difference between A1 and the split filter fed with the
// EKF's own prior covariances and inverse innovation covariances.
inline double injection_error(const Dataset& ds) {
  const SlamModel sys(ds.landmarks());
  std::vector<FilterRun> runs;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    runs.push_back(run_filter(t, slam_filter_model(sys, ds.trajectory_noise(i)),
                              initial_belief(t, ds.trajectory_noise(i)), true));
  }
  SplitKalmanNetConfig cfg;
  cfg.embed_dim = cfg.hidden_dim = 4;
  LearnedGainFilter f = make_split_kalmannet(sys, cfg, FeatureNormalization::identity(sys.state_dim(), sys.measurement_dim()), 1);
  const LearnedGainFilter::FactorSource source = [&](std::size_t b, int t, const VectorXd&, const MatrixXd&) {
    return Factors{runs[b].prior_covs[t], runs[b].innovation_cov_inverses[t]};
  };
  const std::vector<Sequence> seqs = to_sequences(ds);
  LearnedGainFilter::PassOptions o;
  o.source = &source;
  o.keep_estimates = true;
  const auto pass = f.evaluate(pointers(seqs), o);
  double worst = 0;
  for (std::size_t b = 0; b < seqs.size(); ++b)
    for (int t = 0; t < seqs[b].steps(); ++t)
      worst = std::max(worst, sys.state_difference(pass.estimates[b][t], runs[b].means[t]).cwiseAbs().maxCoeff());
  return worst;
}

// ---- gradients ---------------------------------------------------------------

// BPTT of a bare recurrent net against central differences.
inline double bptt_error(std::uint64_t seed) {
  nn::RecurrentGainNet net({4, 5, 6, 2, 3, nn::Activation::kTanh});
  net.init_uniform(seed);
  RandomStream rng(seed, 9);
  std::vector<MatrixXd> xs, ws;
  for (int t = 0; t < 6; ++t) {
    xs.push_back(oracle::random_matrix(rng, 4, 2));
    ws.push_back(oracle::random_matrix(rng, 6, 2));
  }
  auto objective = [&](nn::Tape* tape) {
    net.reset(2);
    double total = 0;
    if (tape) tape->assign(xs.size(), {});
    for (std::size_t t = 0; t < xs.size(); ++t)
      total += (ws[t].array() * net.forward(xs[t], tape ? &(*tape)[t] : nullptr).array()).sum();
    return total;
  };
  nn::Tape tape;
  objective(&tape);
  const VectorXd grad = nn::backward_through_time(net, tape, ws);
  const VectorXd theta = net.parameters();
  const VectorXd fd = oracle::central_gradient(
      [&](const VectorXd& p) {
        net.parameters() = p;
        return objective(nullptr);
      },
      theta, 1e-6);
  net.parameters() = theta;
  return oracle::relative_error(grad, fd);
}

// Small SLAM problem for end-to-end gradient checks.
struct ToySlam {
  SlamModel sys{2};
  Dataset ds;
  std::vector<Sequence> seqs;
  FeatureNormalization norm;
  explicit ToySlam(int count = 3, int steps = 6, std::uint64_t seed = 5) {
    ScenarioConfig sc = training_scenario(count, steps, seed);
    sc.landmarks = 2;
    sc.landmark_box = 10;
    ds = generate_dataset(sc, training_noise());
    seqs = to_sequences(ds);
    norm = compute_normalization(sys, ds, 0);
  }
};

inline LearnedGainFilter toy_a3(const StateSpaceModel& sys, const FeatureNormalization& norm, std::uint64_t seed = 3) {
  KalmanNetConfig c;
  c.embed_dim = c.hidden_dim = 6;
  c.head_scale = 1.0;
  return make_kalmannet(sys, c, norm, seed);
}

inline LearnedGainFilter toy_a4(const StateSpaceModel& sys, const FeatureNormalization& norm, FactorForm form,
                                std::uint64_t seed = 3) {
  SplitKalmanNetConfig c;
  c.embed_dim = c.hidden_dim = 6;
  c.head_scale = 1.0;
  c.factor_form = form;
  return make_split_kalmannet(sys, c, norm, seed);
}

// Norm-wise relative error of the analytic loss gradient of each net
// against central differences (other nets frozen).
inline std::vector<double> filter_gradient_errors(LearnedGainFilter& f, const std::vector<const Sequence*>& batch) {
  LearnedGainFilter::PassOptions o;
  o.want_gradient = true;
  const auto pass = f.evaluate(batch, o);
  std::vector<double> errors;
  for (std::size_t j = 0; j < f.nets().size(); ++j) {
    VectorXd& theta = f.nets()[j].parameters();
    const VectorXd saved = theta;
    const VectorXd fd = oracle::central_gradient(
        [&](const VectorXd& p) {
          theta = p;
          return loss_of(f, batch);
        },
        saved, 1e-6);
    theta = saved;
    errors.push_back(oracle::relative_error(pass.gradients[j], fd));
  }
  return errors;
}

// Worst gradient error over A3 and both A4 factor forms on the toy SLAM problem.
inline double slam_gradient_error() {
  ToySlam s;
  const auto batch = pointers(s.seqs);
  double worst = 0;
  LearnedGainFilter a3 = toy_a3(s.sys, s.norm);
  for (double e : filter_gradient_errors(a3, batch)) worst = std::max(worst, e);
  for (FactorForm form : {FactorForm::kLinear, FactorForm::kGram}) {
    LearnedGainFilter a4 = toy_a4(s.sys, s.norm, form);
    for (double e : filter_gradient_errors(a4, batch)) worst = std::max(worst, e);
  }
  return worst;
}

// Loss gradient with respect to a constant injected gain on a toy linear
// problem with A = 0, against the outer-product closed form
// dL/dK = 2/T sum_t (x_t|t - x_t) dy_t^T and against central differences.
inline double constant_gain_error(std::uint64_t seed, int steps = 2) {
  RandomStream rng(seed, 0);
  const int n = 3, m = 2;
  const LinearModel sys(MatrixXd::Zero(n, n), oracle::random_matrix(rng, n, 2), oracle::random_matrix(rng, m, n));
  Sequence seq;
  seq.initial_mean = VectorXd::Zero(n);
  for (int t = 0; t < steps; ++t) {
    seq.inputs.push_back({rng.normal(), rng.normal()});
    seq.states.push_back(oracle::random_matrix(rng, n, 1));
    seq.measurements.push_back(oracle::random_matrix(rng, m, 1));
  }
  MatrixXd K = oracle::random_matrix(rng, n, m, 0.5);
  LearnedGainFilter f = toy_a3(sys, FeatureNormalization::identity(n, m));
  const LearnedGainFilter::FactorSource source = [&](std::size_t, int, const VectorXd&, const MatrixXd&) {
    return Factors{K};
  };
  const std::vector<const Sequence*> batch{&seq};
  LearnedGainFilter::PassOptions o;
  o.source = &source;
  o.want_gain_adjoints = true;
  o.keep_estimates = true;
  const auto pass = f.evaluate(batch, o);
  MatrixXd autodiff = MatrixXd::Zero(n, m), closed = MatrixXd::Zero(n, m);
  for (int t = 0; t < steps; ++t) {
    autodiff += pass.gain_adjoints[0][t];
    const VectorXd prior = sys.B() * Eigen::Vector2d(seq.inputs[t].v, seq.inputs[t].dtheta);
    const VectorXd dy = seq.measurements[t] - sys.C() * prior;
    closed += 2.0 / steps * (pass.estimates[0][t] - seq.states[t]) * dy.transpose();
  }
  const VectorXd k0 = Eigen::Map<const VectorXd>(K.data(), K.size());
  const VectorXd fd = oracle::central_gradient(
      [&](const VectorXd& k) {
        K = Eigen::Map<const MatrixXd>(k.data(), n, m);
        return loss_of(f, batch, &source);
      },
      k0, 1e-4);
  K = Eigen::Map<const MatrixXd>(k0.data(), n, m);
  return std::max(oracle::relative_error(autodiff, closed),
                  oracle::relative_error(Eigen::Map<const MatrixXd>(fd.data(), n, m), closed));
}

// Chain structure of the split gradients on a toy linear problem whose
// network inputs do not depend on the parameters (routing F5, F6 only): the
// autodiff gradient of each net equals BPTT driven by the manual factor
// adjoints dG1 = dK G2^T H and dG2 = H G1^T dK. Returns the worse of the
// two relative errors.
inline double split_chain_error(std::uint64_t seed, int steps = 5) {
  RandomStream rng(seed, 0);
  const int n = 4, m = 3;
  const LinearModel sys(0.6 * oracle::random_matrix(rng, n, n) / std::sqrt(double(n)), oracle::random_matrix(rng, n, 2),
                        oracle::random_matrix(rng, m, n));
  Sequence seq;
  seq.initial_mean = oracle::random_matrix(rng, n, 1);
  for (int t = 0; t < steps; ++t) {
    seq.inputs.push_back({rng.normal(), rng.normal()});
    seq.states.push_back(oracle::random_matrix(rng, n, 1));
    seq.measurements.push_back(oracle::random_matrix(rng, m, 1));
  }
  SplitKalmanNetConfig cfg;
  cfg.embed_dim = cfg.hidden_dim = 5;
  cfg.head_scale = 1.0;
  cfg.factor_form = FactorForm::kLinear;
  cfg.g1_init = 0.3;
  cfg.g2_init = 0.3;
  cfg.g1_routing = cfg.g2_routing = {FeatureGroup::kLinearization, FeatureGroup::kJacobian};
  LearnedGainFilter f = make_split_kalmannet(sys, cfg, FeatureNormalization::identity(n, m), seed);
  const std::vector<const Sequence*> batch{&seq};
  LearnedGainFilter::PassOptions o;
  o.want_gradient = true;
  o.want_gain_adjoints = true;
  const auto pass = f.evaluate(batch, o);

  // Replay both nets on the (constant) inputs, recording tapes.
  f.begin(seq.initial_mean);
  const std::vector<VectorXd> inputs =
      f.step_features(sys.transition(seq.initial_mean, seq.inputs[0]), seq.measurements[0]);
  std::vector<nn::RecurrentGainNet> nets = f.nets();
  std::vector<nn::Tape> tapes(2, nn::Tape(steps));
  std::vector<MatrixXd> raw(2);
  std::vector<Factors> factors;
  for (int j = 0; j < 2; ++j) nets[j].reset(1);
  for (int t = 0; t < steps; ++t) {
    for (int j = 0; j < 2; ++j) {
      const int d = nets[j].shape().output_rows;
      raw[j] = nn::reshape_output(nets[j].forward(inputs[j], &tapes[j][t]), 0, d, d);
    }
    factors.push_back(f.decode(raw));
  }
  // Identity normalization makes the linear decode the identity map, so the
  // factor adjoints are the raw output adjoints.
  const MatrixXd& H = sys.C();
  std::vector<MatrixXd> d1, d2;
  for (int t = 0; t < steps; ++t) {
    const MatrixXd& dK = pass.gain_adjoints[0][t];
    d1.push_back(nn::flatten_row_major(dK * factors[t][1].transpose() * H));
    d2.push_back(nn::flatten_row_major(H * factors[t][0].transpose() * dK));
  }
  const VectorXd g1 = nn::backward_through_time(nets[0], tapes[0], d1);
  const VectorXd g2 = nn::backward_through_time(nets[1], tapes[1], d2);
  // A vanishing gradient would make the comparison vacuous.
  if (g1.norm() < 1e-6 || g2.norm() < 1e-6) return std::numeric_limits<double>::infinity();
  return std::max(oracle::relative_error(pass.gradients[0], g1), oracle::relative_error(pass.gradients[1], g2));
}

// ---- geometry ------------------------------------------------------------

inline VectorXd random_slam_state(RandomStream& rng, int landmarks) {
  VectorXd x(state_dim_for(landmarks));
  x(0) = rng.uniform(-20, 20);
  x(1) = rng.uniform(-20, 20);
  x(2) = rng.uniform(-std::numbers::pi, std::numbers::pi);
  for (int m = 0; m < landmarks; ++m) {
    double dx, dy;
    do {
      dx = rng.uniform(-30, 30);
      dy = rng.uniform(-30, 30);
    } while (std::hypot(dx, dy) < 1.0);
    x(3 + 2 * m) = x(0) + dx;
    x(4 + 2 * m) = x(1) + dy;
  }
  return x;
}

// Worst relative error of the analytic observation Jacobian against central
// differences with step h over `count` random states.
inline double jacobian_error(int count, double h, std::uint64_t seed) {
  RandomStream rng(seed, 1);
  double worst = 0;
  for (int i = 0; i < count; ++i) {
    const VectorXd x = random_slam_state(rng, 5);
    const VectorXd y0 = measure(x);
    const MatrixXd fd = oracle::central_jacobian(
        [&](const VectorXd& s) { return measurement_difference(measure(s), y0); }, x, h);
    worst = std::max(worst, oracle::relative_error(jacobian_h(x), fd));
  }
  return worst;
}

// Worst landmark reconstruction error of inverse_observation after measure.
inline double round_trip_error(int count, std::uint64_t seed) {
  RandomStream rng(seed, 2);
  double worst = 0;
  for (int i = 0; i < count; ++i) {
    const VectorXd x = random_slam_state(rng, 1);
    const VectorXd y = measure(x);
    worst = std::max(worst, (inverse_observation(pose_of(x), y(0), y(1)) - x.tail<2>()).norm());
  }
  return worst;
}

// Number of violated wrap properties over angles clustered around +-pi.
inline int wrap_violations(int count, std::uint64_t seed) {
  constexpr double kPi = std::numbers::pi;
  RandomStream rng(seed, 3);
  int bad = 0;
  if (wrap_angle(kPi) != -kPi || wrap_angle(-kPi) != -kPi) ++bad;
  for (int i = 0; i < count; ++i) {
    const double centre = (i % 2 == 0 ? kPi : -kPi) + 2 * kPi * double(int(rng.uniform_index(7)) - 3);
    const double a = centre + std::ldexp(rng.uniform(-1, 1), -int(rng.uniform_index(40)));
    const double w = wrap_angle(a);
    if (!(w >= -kPi && w < kPi)) ++bad;
    const double turns = (a - w) / (2 * kPi);
    if (std::abs(turns - std::round(turns)) > 1e-9) ++bad;
    // Differences of angles on either side of the cut stay short.
    const double eps = rng.uniform(1e-9, 0.1);
    if (std::abs(wrap_angle((kPi - eps) - (-kPi + eps)) + 2 * eps) > 1e-9) ++bad;
  }
  return bad;
}

}  // namespace splitkf::suites

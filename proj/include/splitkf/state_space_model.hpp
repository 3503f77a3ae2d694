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

#include <Eigen/Dense>

#include "splitkf/slam_model.hpp"

namespace splitkf {

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;

/// Nonlinear state-space model x' = f(x, u), y = h(x) as consumed by the
/// filters. Angle-valued components are wrapped by the model itself.
class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index measurement_dim() const = 0;

  virtual VectorXd transition(const VectorXd& x, const MotionInput& u) const = 0;
  virtual MatrixXd transition_jacobian(const VectorXd& x, const MotionInput& u) const = 0;
  virtual VectorXd observe(const VectorXd& x) const = 0;
  virtual MatrixXd observation_jacobian(const VectorXd& x) const = 0;
  /// Gradient of <adjoint, observation_jacobian(x)> with respect to x.
  virtual VectorXd observation_jacobian_vjp(const VectorXd& x, const MatrixXd& adjoint) const = 0;

  virtual VectorXd state_difference(const VectorXd& a, const VectorXd& b) const { return a - b; }
  virtual VectorXd measurement_difference(const VectorXd& a, const VectorXd& b) const {
    return a - b;
  }
  /// Brings a state back to its canonical chart (e.g. heading into [-pi, pi)).
  virtual void normalize_state(VectorXd& /*x*/) const {}
};

class SlamModel final : public StateSpaceModel {
 public:
  explicit SlamModel(int landmarks) : landmarks_(landmarks) {
    require(landmarks >= 1, "SlamModel: need at least one landmark");
  }

  int landmarks() const { return landmarks_; }
  Eigen::Index state_dim() const override { return state_dim_for(landmarks_); }
  Eigen::Index measurement_dim() const override { return 2 * landmarks_; }

  VectorXd transition(const VectorXd& x, const MotionInput& u) const override {
    return motion_step(x, u);
  }
  MatrixXd transition_jacobian(const VectorXd& x, const MotionInput& u) const override {
    return jacobian_f(x, u);
  }
  VectorXd observe(const VectorXd& x) const override { return measure(x); }
  MatrixXd observation_jacobian(const VectorXd& x) const override { return jacobian_h(x); }
  VectorXd observation_jacobian_vjp(const VectorXd& x, const MatrixXd& adjoint) const override {
    return jacobian_h_vjp(x, adjoint);
  }
  VectorXd state_difference(const VectorXd& a, const VectorXd& b) const override {
    return splitkf::state_difference(a, b);
  }
  VectorXd measurement_difference(const VectorXd& a, const VectorXd& b) const override {
    return splitkf::measurement_difference(a, b);
  }
  void normalize_state(VectorXd& x) const override { x(2) = wrap_angle(x(2)); }

 private:
  int landmarks_;
};

/// x' = A x + B [v, dtheta]^T, y = C x. Used for the linear-Gaussian
/// specializations in tests and oracles.
class LinearModel final : public StateSpaceModel {
 public:
  LinearModel(MatrixXd A, MatrixXd B, MatrixXd C) : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
    require(A_.rows() == A_.cols(), "LinearModel: A must be square");
    require(B_.rows() == A_.rows() && B_.cols() == 2, "LinearModel: B must be n x 2");
    require(C_.cols() == A_.rows(), "LinearModel: C must have n columns");
  }

  Eigen::Index state_dim() const override { return A_.rows(); }
  Eigen::Index measurement_dim() const override { return C_.rows(); }

  VectorXd transition(const VectorXd& x, const MotionInput& u) const override {
    return A_ * x + B_ * Eigen::Vector2d(u.v, u.dtheta);
  }
  MatrixXd transition_jacobian(const VectorXd&, const MotionInput&) const override { return A_; }
  VectorXd observe(const VectorXd& x) const override { return C_ * x; }
  MatrixXd observation_jacobian(const VectorXd&) const override { return C_; }
  VectorXd observation_jacobian_vjp(const VectorXd& x, const MatrixXd&) const override {
    return VectorXd::Zero(x.size());
  }

  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }
  const MatrixXd& C() const { return C_; }

 private:
  MatrixXd A_;
  MatrixXd B_;
  MatrixXd C_;
};

}  // namespace splitkf

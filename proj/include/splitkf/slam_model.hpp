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

// Range-bearing landmark SLAM: unicycle motion with dt = 1 s, per-landmark
// (range, bearing) observations, their Jacobians and the inverse observation
// model. State layout is [x, y, theta, x_1, y_1, ..., x_M, y_M].

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "splitkf/error.hpp"

namespace splitkf {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Pose {
  Scalar x{0};
  Scalar y{0};
  Scalar theta{0};
};

// Speed and heading increment applied over one 1 s step.
struct MotionInput {
  double v{0.0};
  double dtheta{0.0};
};

inline constexpr int kPoseDim = 3;

// Ranges at or below this are treated as coincident agent and landmark.
inline constexpr double kMinRange = 1e-9;

/// Wraps an angle into [-pi, pi). -pi stays -pi, +pi maps to -pi.
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  if (!std::isfinite(a)) fail(ErrorKind::kInvalidArgument, "wrap_angle: non-finite angle");
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  constexpr Scalar kTwoPi = 2 * kPi;
  if (a >= -kPi && a < kPi) return a;
  Scalar r = a - kTwoPi * std::floor((a + kPi) / kTwoPi);
  if (r >= kPi) r -= kTwoPi;
  if (r < -kPi) r += kTwoPi;
  return r;
}

inline int landmark_count_for(Eigen::Index state_dim) {
  if (state_dim < kPoseDim + 2 || (state_dim - kPoseDim) % 2 != 0) {
    fail(ErrorKind::kInvalidArgument,
         "state dimension " + std::to_string(state_dim) + " is not 3 + 2M with M >= 1");
  }
  return static_cast<int>((state_dim - kPoseDim) / 2);
}

inline Eigen::Index state_dim_for(int landmarks) { return kPoseDim + 2 * landmarks; }

template <typename Derived>
Pose<typename Derived::Scalar> pose_of(const Eigen::MatrixBase<Derived>& state) {
  return {state(0), state(1), state(2)};
}

namespace detail {

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
  if (!v.allFinite()) fail(ErrorKind::kInvalidArgument, std::string(what) + ": non-finite entries");
}

// Offset and range from the agent to landmark m.
template <typename Derived>
void landmark_offset(const Eigen::MatrixBase<Derived>& state, int m, typename Derived::Scalar& dx,
                     typename Derived::Scalar& dy, typename Derived::Scalar& r) {
  const Eigen::Index k = kPoseDim + 2 * m;
  dx = state(k) - state(0);
  dy = state(k + 1) - state(1);
  r = std::hypot(dx, dy);
  if (!(r > kMinRange)) {
    fail(ErrorKind::kDegenerateGeometry,
         "landmark " + std::to_string(m) + " coincides with the agent (range " + std::to_string(r) + ")");
  }
}

}  // namespace detail

/// One step of the motion model. `noise` is (w_x, w_y, w_theta); landmarks are static.
template <typename Derived, typename NoiseDerived>
Vector<typename Derived::Scalar> motion_step(const Eigen::MatrixBase<Derived>& state,
                                             const MotionInput& input,
                                             const Eigen::MatrixBase<NoiseDerived>& noise) {
  using Scalar = typename Derived::Scalar;
  landmark_count_for(state.size());
  if (noise.size() != kPoseDim) {
    fail(ErrorKind::kInvalidArgument, "motion_step: process noise must have length 3");
  }
  detail::check_finite(noise, "motion_step noise");
  if (!std::isfinite(input.v) || !std::isfinite(input.dtheta)) {
    fail(ErrorKind::kInvalidArgument, "motion_step: non-finite motion input");
  }
  Vector<Scalar> next = state;
  const Scalar theta = state(2);
  next(0) = state(0) + Scalar(input.v) * std::cos(theta) + noise(0);
  next(1) = state(1) + Scalar(input.v) * std::sin(theta) + noise(1);
  next(2) = wrap_angle<Scalar>(theta + Scalar(input.dtheta) + noise(2));
  return next;
}

template <typename Derived>
Vector<typename Derived::Scalar> motion_step(const Eigen::MatrixBase<Derived>& state,
                                             const MotionInput& input) {
  return motion_step(state, input, Vector<typename Derived::Scalar>::Zero(kPoseDim));
}

/// Interleaved [r_1, phi_1, ..., r_M, phi_M] with bearings wrapped.
template <typename Derived>
Vector<typename Derived::Scalar> measure(const Eigen::MatrixBase<Derived>& state) {
  using Scalar = typename Derived::Scalar;
  const int landmarks = landmark_count_for(state.size());
  Vector<Scalar> y(2 * landmarks);
  for (int m = 0; m < landmarks; ++m) {
    Scalar dx, dy, r;
    detail::landmark_offset(state, m, dx, dy, r);
    y(2 * m) = r;
    y(2 * m + 1) = wrap_angle<Scalar>(std::atan2(dy, dx) - state(2));
  }
  return y;
}

/// d motion_step / d state at zero noise.
template <typename Derived>
Matrix<typename Derived::Scalar> jacobian_f(const Eigen::MatrixBase<Derived>& state,
                                            const MotionInput& input) {
  using Scalar = typename Derived::Scalar;
  landmark_count_for(state.size());
  Matrix<Scalar> F = Matrix<Scalar>::Identity(state.size(), state.size());
  F(0, 2) = -Scalar(input.v) * std::sin(state(2));
  F(1, 2) = Scalar(input.v) * std::cos(state(2));
  return F;
}

/// d measure / d state, 2M x (3 + 2M).
template <typename Derived>
Matrix<typename Derived::Scalar> jacobian_h(const Eigen::MatrixBase<Derived>& state) {
  using Scalar = typename Derived::Scalar;
  const int landmarks = landmark_count_for(state.size());
  Matrix<Scalar> H = Matrix<Scalar>::Zero(2 * landmarks, state.size());
  for (int m = 0; m < landmarks; ++m) {
    Scalar dx, dy, r;
    detail::landmark_offset(state, m, dx, dy, r);
    const Scalar r2 = r * r;
    const Eigen::Index row = 2 * m;
    const Eigen::Index col = kPoseDim + 2 * m;
    H(row, 0) = -dx / r;
    H(row, 1) = -dy / r;
    H(row, col) = dx / r;
    H(row, col + 1) = dy / r;
    H(row + 1, 0) = dy / r2;
    H(row + 1, 1) = -dx / r2;
    H(row + 1, 2) = Scalar(-1);
    H(row + 1, col) = -dy / r2;
    H(row + 1, col + 1) = dx / r2;
  }
  return H;
}

/// Gradient of <adjoint, jacobian_h(state)> with respect to the state, i.e. the
/// second-derivative contraction needed when H itself feeds a differentiated
/// computation.
template <typename Derived, typename AdjDerived>
Vector<typename Derived::Scalar> jacobian_h_vjp(const Eigen::MatrixBase<Derived>& state,
                                                const Eigen::MatrixBase<AdjDerived>& adjoint) {
  using Scalar = typename Derived::Scalar;
  const int landmarks = landmark_count_for(state.size());
  if (adjoint.rows() != 2 * landmarks || adjoint.cols() != state.size()) {
    fail(ErrorKind::kInvalidArgument, "jacobian_h_vjp: adjoint shape mismatch");
  }
  Vector<Scalar> grad = Vector<Scalar>::Zero(state.size());
  for (int m = 0; m < landmarks; ++m) {
    Scalar dx, dy, r;
    detail::landmark_offset(state, m, dx, dy, r);
    const Scalar r2 = r * r;
    const Scalar r3 = r2 * r;
    const Scalar r4 = r2 * r2;
    const Eigen::Index row = 2 * m;
    const Eigen::Index col = kPoseDim + 2 * m;
    // Entries as functions of (dx, dy): a = dx/r, b = dy/r, c = dy/r^2, d = dx/r^2.
    const Scalar da_ddx = dy * dy / r3, da_ddy = -dx * dy / r3;
    const Scalar db_ddx = -dx * dy / r3, db_ddy = dx * dx / r3;
    const Scalar dc_ddx = -2 * dx * dy / r4, dc_ddy = (dx * dx - dy * dy) / r4;
    const Scalar dd_ddx = (dy * dy - dx * dx) / r4, dd_ddy = -2 * dx * dy / r4;
    // Coefficient of each of a, b, c, d in <adjoint, H> for this landmark.
    const Scalar wa = adjoint(row, col) - adjoint(row, 0);
    const Scalar wb = adjoint(row, col + 1) - adjoint(row, 1);
    const Scalar wc = adjoint(row + 1, 0) - adjoint(row + 1, col);
    const Scalar wd = adjoint(row + 1, col + 1) - adjoint(row + 1, 1);
    const Scalar g_dx = wa * da_ddx + wb * db_ddx + wc * dc_ddx + wd * dd_ddx;
    const Scalar g_dy = wa * da_ddy + wb * db_ddy + wc * dc_ddy + wd * dd_ddy;
    grad(0) -= g_dx;
    grad(1) -= g_dy;
    grad(col) += g_dx;
    grad(col + 1) += g_dy;
  }
  return grad;
}

/// Landmark position seen at range r and relative bearing phi from `pose`.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> inverse_observation(const Pose<Scalar>& pose, Scalar r, Scalar phi) {
  if (!(r > 0) || !std::isfinite(r)) {
    fail(ErrorKind::kInvalidArgument, "inverse_observation: range must be positive and finite");
  }
  const Scalar heading = pose.theta + phi;
  return {pose.x + r * std::cos(heading), pose.y + r * std::sin(heading)};
}

/// Differences of SLAM states with the heading component wrapped.
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> state_difference(const Eigen::MatrixBase<DerivedA>& a,
                                                   const Eigen::MatrixBase<DerivedB>& b) {
  Vector<typename DerivedA::Scalar> d = a - b;
  d(2) = wrap_angle(d(2));
  return d;
}

/// Differences of measurement vectors with every bearing wrapped.
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> measurement_difference(const Eigen::MatrixBase<DerivedA>& a,
                                                         const Eigen::MatrixBase<DerivedB>& b) {
  Vector<typename DerivedA::Scalar> d = a - b;
  for (Eigen::Index i = 1; i < d.size(); i += 2) d(i) = wrap_angle(d(i));
  return d;
}

}  // namespace splitkf

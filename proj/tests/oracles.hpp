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

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls into the filter code under test.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "splitkf/rng.hpp"

namespace splitkf::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LinearGaussian {
  MatrixXd A, B, C, Q, R;
};

struct KalmanTrace {
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;
};

// Textbook linear Kalman filter: explicit inverse and Joseph-form update.
inline KalmanTrace linear_kalman(const LinearGaussian& m, VectorXd x, MatrixXd P,
                                 const std::vector<Eigen::Vector2d>& inputs,
                                 const std::vector<VectorXd>& ys) {
  KalmanTrace out;
  const MatrixXd I = MatrixXd::Identity(x.size(), x.size());
  for (std::size_t t = 0; t < ys.size(); ++t) {
    x = m.A * x + m.B * inputs[t];
    P = m.A * P * m.A.transpose() + m.Q;
    const MatrixXd S = m.C * P * m.C.transpose() + m.R;
    const MatrixXd K = P * m.C.transpose() * S.inverse();
    x = x + K * (ys[t] - m.C * x);
    P = (I - K * m.C) * P * (I - K * m.C).transpose() + K * m.R * K.transpose();
    out.means.push_back(x);
    out.covs.push_back(P);
  }
  return out;
}

inline MatrixXd random_matrix(RandomStream& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = scale * rng.normal();
  return M;
}

inline MatrixXd random_spd(RandomStream& rng, Eigen::Index n, double floor = 0.1) {
  const MatrixXd L = random_matrix(rng, n, n);
  return L * L.transpose() / double(n) + floor * MatrixXd::Identity(n, n);
}

// Central difference of a scalar function along each coordinate.
inline VectorXd central_gradient(const std::function<double(const VectorXd&)>& f, VectorXd x, double h) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double old = x(i);
    x(i) = old + h;
    const double up = f(x);
    x(i) = old - h;
    const double down = f(x);
    x(i) = old;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

// Central difference Jacobian of a vector function.
inline MatrixXd central_jacobian(const std::function<VectorXd(const VectorXd&)>& f, VectorXd x, double h) {
  const VectorXd y0 = f(x);
  MatrixXd J(y0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double old = x(i);
    x(i) = old + h;
    const VectorXd up = f(x);
    x(i) = old - h;
    const VectorXd down = f(x);
    x(i) = old;
    J.col(i) = (up - down) / (2 * h);
  }
  return J;
}

// Norm-wise relative error ||a - b|| / max(||b||, tiny).
inline double relative_error(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace splitkf::oracle

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

#include <cmath>

#include <Eigen/Dense>

#include "splitkf/error.hpp"
#include "splitkf/slam_model.hpp"

namespace splitkf {

/// Covariance factors: Q block = sigma_w2 * diag(q2, q2, 1),
/// R = I_M (x) sigma_v2 * diag(r2, 1).
struct NoiseConfig {
  double sigma_w2{1e-3};
  double sigma_v2{1e-3};
  double q2{10.0};
  double r2{1e3};

  // sigma_w2 / sigma_v2 may be zero (noiseless generation); heterogeneity
  // factors must be strictly positive.
  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    require(ok(sigma_w2) && ok(sigma_v2), "NoiseConfig: variances must be finite and non-negative");
    require(std::isfinite(q2) && q2 > 0.0 && std::isfinite(r2) && r2 > 0.0,
            "NoiseConfig: q2 and r2 must be finite and positive");
  }

  bool operator==(const NoiseConfig&) const = default;
};

inline double from_db(double db) { return std::pow(10.0, db / 10.0); }
inline double to_db(double linear) { return 10.0 * std::log10(linear); }

template <typename Scalar = double>
Matrix<Scalar> build_Q(const NoiseConfig& cfg, int landmarks) {
  cfg.validate();
  require(landmarks >= 1, "build_Q: need at least one landmark");
  const Eigen::Index n = state_dim_for(landmarks);
  Matrix<Scalar> Q = Matrix<Scalar>::Zero(n, n);
  Q(0, 0) = Scalar(cfg.sigma_w2 * cfg.q2);
  Q(1, 1) = Scalar(cfg.sigma_w2 * cfg.q2);
  Q(2, 2) = Scalar(cfg.sigma_w2);
  return Q;
}

template <typename Scalar = double>
Matrix<Scalar> build_R(const NoiseConfig& cfg, int landmarks) {
  cfg.validate();
  require(landmarks >= 1, "build_R: need at least one landmark");
  Matrix<Scalar> R = Matrix<Scalar>::Zero(2 * landmarks, 2 * landmarks);
  for (int m = 0; m < landmarks; ++m) {
    R(2 * m, 2 * m) = Scalar(cfg.sigma_v2 * cfg.r2);
    R(2 * m + 1, 2 * m + 1) = Scalar(cfg.sigma_v2);
  }
  return R;
}

}  // namespace splitkf

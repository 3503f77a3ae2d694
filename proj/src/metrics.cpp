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

#include "splitkf/metrics.hpp"

#include <cmath>
#include <limits>

#include "splitkf/error.hpp"

namespace splitkf {

double squared_error(const StateSpaceModel& system, const VectorXd& truth, const VectorXd& estimate) {
  return system.state_difference(estimate, truth).squaredNorm();
}

MseReport mse_db(const StateSpaceModel& system, const std::vector<std::vector<VectorXd>>& truth,
                 const Estimates& estimates) {
  require(truth.size() == estimates.size(), "mse_db: truth and estimates differ in trajectory count");
  MseReport report;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> finite_db;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (estimates[i].empty()) continue;
    require(estimates[i].size() == truth[i].size() && !truth[i].empty(),
            "mse_db: trajectory " + std::to_string(i) + " has mismatched length");
    double sum = 0.0;
    for (std::size_t t = 0; t < truth[i].size(); ++t) sum += squared_error(system, truth[i][t], estimates[i][t]);
    total += sum;
    count += truth[i].size();
    const double db = sum > 0.0 ? 10.0 * std::log10(sum / static_cast<double>(truth[i].size()))
                                : -std::numeric_limits<double>::infinity();
    report.per_trajectory_db.push_back(db);
    if (std::isfinite(db)) finite_db.push_back(db);
    ++report.trajectories;
  }
  require(count > 0, "mse_db: no trajectories to score");
  if (total / static_cast<double>(count) <= kPerfectThreshold) {
    report.perfect = true;
    report.mu_db = -std::numeric_limits<double>::infinity();
    return report;
  }
  report.mu_db = 10.0 * std::log10(total / static_cast<double>(count));
  if (finite_db.size() > 1) {
    double mean = 0.0;
    for (double d : finite_db) mean += d;
    mean /= static_cast<double>(finite_db.size());
    double var = 0.0;
    for (double d : finite_db) var += (d - mean) * (d - mean);
    report.sigma_db = std::sqrt(var / static_cast<double>(finite_db.size() - 1));
  }
  return report;
}

}  // namespace splitkf

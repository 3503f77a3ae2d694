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
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "splitkf/dataset.hpp"

using namespace splitkf;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("splitkf_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_same(const Trajectory& a, const Trajectory& b) {
  CHECK(a.initial_state == b.initial_state);
  CHECK(a.initial_measurement == b.initial_measurement);
  CHECK(a.states == b.states);
  CHECK(a.measurements == b.measurements);
  CHECK(a.sigma_w2 == b.sigma_w2);
  CHECK(a.sigma_v2 == b.sigma_v2);
  CHECK(a.swaps == b.swaps);
  REQUIRE(a.inputs.size() == b.inputs.size());
  for (std::size_t t = 0; t < a.inputs.size(); ++t) {
    CHECK(a.inputs[t].v == b.inputs[t].v);
    CHECK(a.inputs[t].dtheta == b.inputs[t].dtheta);
  }
}

}  // namespace

TEST_CASE("trajectories follow the generative model exactly") {
  const ScenarioConfig sc = training_scenario(20, 15, 4);
  const Dataset ds = generate_dataset(sc, training_noise());
  REQUIRE(ds.size() == 20);
  for (const Trajectory& t : ds.trajectories) {
    CHECK(t.initial_state.head<3>().isZero());
    Eigen::VectorXd x = t.initial_state;
    CHECK(measurement_difference(t.initial_measurement, measure(x) + t.initial_measurement_noise).norm() < 1e-12);
    for (int k = 0; k < t.steps(); ++k) {
      x = motion_step(x, t.inputs[k], t.process_noise[k]);
      CHECK(state_difference(x, t.states[k]).norm() == 0.0);
      const Eigen::VectorXd y = measure(x) + t.measurement_noise[k];
      CHECK(measurement_difference(t.measurements[k], y).norm() < 1e-12);
      CHECK(t.inputs[k].v == 5.0);
      CHECK(std::abs(t.inputs[k].dtheta) <= std::numbers::pi);
    }
    CHECK(t.sigma_w2 >= 5e-4);
    CHECK(t.sigma_w2 <= 5e-2);
  }
}

TEST_CASE("landmarks are distinct integer cells away from the origin") {
  ScenarioConfig sc = training_scenario(30, 2, 8);
  sc.landmarks = 8;
  sc.landmark_box = 2;
  const Dataset ds = generate_dataset(sc, NoiseSpec::fixed({}));
  for (const Trajectory& t : ds.trajectories) {
    std::set<std::pair<int, int>> cells;
    for (int m = 0; m < 8; ++m) {
      const double lx = t.initial_state(3 + 2 * m), ly = t.initial_state(4 + 2 * m);
      CHECK(lx == std::round(lx));
      CHECK(std::abs(lx) <= 2);
      CHECK(std::abs(ly) <= 2);
      CHECK(!(lx == 0 && ly == 0));
      cells.insert({int(lx), int(ly)});
    }
    CHECK(cells.size() == 8);
  }
  sc.landmarks = 25;
  CHECK_THROWS_AS(generate_dataset(sc, NoiseSpec::fixed({})), Error);
}

TEST_CASE("generation is deterministic and order independent") {
  const ScenarioConfig sc = training_scenario(6, 10, 77);
  const Dataset a = generate_dataset(sc, training_noise());
  const Dataset b = generate_dataset(sc, training_noise());
  for (std::size_t i = 0; i < a.size(); ++i) check_same(a.trajectories[i], b.trajectories[i]);
  check_same(generate_trajectory(sc, training_noise(), 4), a.trajectories[4]);
  ScenarioConfig other = sc;
  other.seed = 78;
  CHECK(generate_dataset(other, training_noise()).trajectories[0].states != a.trajectories[0].states);
}

TEST_CASE("log-uniform variance draws cover the range") {
  const Dataset ds = generate_dataset(training_scenario(2000, 1, 5), training_noise());
  double lo = 1, hi = 0, mean_log = 0;
  for (const Trajectory& t : ds.trajectories) {
    lo = std::min(lo, t.sigma_v2);
    hi = std::max(hi, t.sigma_v2);
    mean_log += std::log10(t.sigma_v2);
  }
  mean_log /= double(ds.size());
  CHECK(lo >= 5e-4);
  CHECK(hi <= 5e-2);
  CHECK(mean_log == doctest::Approx(0.5 * (std::log10(5e-4) + std::log10(5e-2))).epsilon(0.02));
}

TEST_CASE("zero noise gives clean measurements") {
  const Dataset ds = generate_dataset(test_scenario(3, 5, 1), NoiseSpec::fixed({0.0, 0.0, 1.0, 1.0}));
  for (const Trajectory& t : ds.trajectories) {
    for (int k = 0; k < t.steps(); ++k) CHECK(measurement_difference(t.measurements[k], measure(t.states[k])).norm() == 0.0);
    CHECK((initial_estimate(t) - t.initial_state).norm() < 1e-12);
  }
}

TEST_CASE("association errors swap measurement pairs only") {
  ScenarioConfig sc = test_scenario(40, 30, 2);
  const Dataset clean = generate_dataset(sc, NoiseSpec::fixed({}));
  const Dataset swapped = inject_association_errors(clean, 0.2, 9);
  std::size_t events = 0, steps = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Trajectory& c = clean.trajectories[i];
    const Trajectory& s = swapped.trajectories[i];
    CHECK(c.states == s.states);
    steps += c.steps();
    events += s.swaps.size();
    for (int t = 0; t < c.steps(); ++t) {
      Eigen::VectorXd y = c.measurements[t];
      for (const SwapEvent& e : s.swaps) {
        if (e.step != t) continue;
        CHECK(e.first != e.second);
        std::swap(y(2 * e.first), y(2 * e.second));
        std::swap(y(2 * e.first + 1), y(2 * e.second + 1));
      }
      CHECK(y == s.measurements[t]);
    }
  }
  CHECK(double(events) / double(steps) == doctest::Approx(0.2).epsilon(0.15));
  CHECK(inject_association_errors(clean, 0.0, 9).trajectories[0].swaps.empty());
  CHECK_THROWS_AS(inject_association_errors(clean, 1.5, 9), Error);
}

TEST_CASE("save and load round trip bit for bit") {
  ScenarioConfig sc = training_scenario(4, 6, 12);
  sc.p_switch = 0.1;
  const Dataset ds = generate_dataset(sc, training_noise());
  const auto p1 = temp_file("ds1.jsonl"), p2 = temp_file("ds2.jsonl");
  save_dataset(ds, p1);
  const Dataset back = load_dataset(p1);
  CHECK(back.scenario == ds.scenario);
  CHECK(back.noise == ds.noise);
  CHECK(back.association_seed == ds.association_seed);
  for (std::size_t i = 0; i < ds.size(); ++i) check_same(ds.trajectories[i], back.trajectories[i]);
  save_dataset(back, p2);
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("malformed dataset files are rejected with the right kind") {
  const Dataset ds = generate_dataset(training_scenario(2, 3, 1), training_noise());
  const auto p = temp_file("bad.jsonl");
  save_dataset(ds, p);
  std::string text = slurp(p);
  auto expect_kind = [&](const std::string& contents, ErrorKind kind) {
    std::ofstream(p, std::ios::binary) << contents;
    try {
      load_dataset(p);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == kind);
    }
  };
  expect_kind(text.substr(0, text.size() / 2), ErrorKind::kFormat);
  std::string versioned = text;
  versioned.replace(versioned.find("\"version\":1"), 11, "\"version\":9");
  expect_kind(versioned, ErrorKind::kVersion);
  expect_kind("", ErrorKind::kFormat);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(load_dataset(temp_file("missing.jsonl")), Error);
}

TEST_CASE("invalid configs are rejected") {
  ScenarioConfig sc = training_scenario(1, 1, 0);
  sc.steps = 0;
  CHECK_THROWS_AS(sc.validate(), Error);
  NoiseSpec n = training_noise();
  n.sigma_v2 = {1e-2, 1e-3};
  CHECK_THROWS_AS(n.validate(), Error);
  n.sigma_v2 = {0.0, 1e-3};
  CHECK_THROWS_AS(n.validate(), Error);
  CHECK(scenario_from_json(scenario_to_json(sc)) == sc);
  CHECK(noise_spec_from_json(noise_spec_to_json(training_noise())) == training_noise());
}

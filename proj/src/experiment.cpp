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

#include "splitkf/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "splitkf/config.hpp"
#include "splitkf/ekf.hpp"
#include "splitkf/error.hpp"

namespace splitkf {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool recoverable(const Error& e) {
  return e.kind() == ErrorKind::kDivergence || e.kind() == ErrorKind::kNumerical ||
         e.kind() == ErrorKind::kDegenerateGeometry;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::kA1: return "A1";
    case Estimator::kA2: return "A2";
    case Estimator::kA3: return "A3";
    case Estimator::kA4: return "A4";
  }
  return "?";
}

Estimator estimator_from_name(const std::string& name) {
  if (name == "A1") return Estimator::kA1;
  if (name == "A2") return Estimator::kA2;
  if (name == "A3") return Estimator::kA3;
  if (name == "A4") return Estimator::kA4;
  fail(ErrorKind::kInvalidArgument, "unknown estimator '" + name + "' (expected A1, A2, A3 or A4)");
}

bool is_learned(Estimator e) { return e == Estimator::kA3 || e == Estimator::kA4; }

EstimatorRun run_ekf(const SlamModel& system, const Dataset& ds, const std::optional<NoiseConfig>& assumed) {
  const auto start = Clock::now();
  EstimatorRun out;
  out.estimates.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& traj = ds.trajectories[i];
    const NoiseConfig noise = assumed ? *assumed : ds.trajectory_noise(i);
    try {
      out.estimates[i] = run_filter(traj, slam_filter_model(system, noise), initial_belief(traj, noise)).means;
    } catch (const Error& e) {
      if (!recoverable(e)) throw;
      out.divergent.push_back(i);
    }
  }
  out.runtime_s = seconds_since(start);
  return out;
}

EstimatorRun run_learned(LearnedGainFilter& filter, const Dataset& ds) {
  const auto start = Clock::now();
  EstimatorRun out;
  out.estimates.resize(ds.size());
  const std::vector<Sequence> seqs = to_sequences(ds);
  constexpr std::size_t kBatch = 64;
  for (std::size_t begin = 0; begin < seqs.size(); begin += kBatch) {
    const std::size_t end = std::min(seqs.size(), begin + kBatch);
    try {
      auto est = filter.run_all(std::span<const Sequence>(seqs).subspan(begin, end - begin), kBatch);
      for (std::size_t i = begin; i < end; ++i) out.estimates[i] = std::move(est[i - begin]);
    } catch (const Error& e) {
      if (!recoverable(e)) throw;
      for (std::size_t i = begin; i < end; ++i) {
        try {
          out.estimates[i] = filter.run(seqs[i]);
        } catch (const Error& inner) {
          if (!recoverable(inner)) throw;
          out.divergent.push_back(i);
        }
      }
    }
  }
  out.runtime_s = seconds_since(start);
  return out;
}

void ExperimentSpec::validate() const {
  require(!estimators.empty(), "experiment: no estimators");
  require(!grid.empty(), "experiment: empty grid");
  require(sweep == "none" || sweep == "inv_sigma_v2_db" || sweep == "r2_db" || sweep == "p_switch",
          "experiment: unknown sweep variable '" + sweep + "'");
  test.validate();
  noise.validate();
  for (double v : grid) {
    require(std::isfinite(v), "experiment: grid values must be finite");
    if (sweep == "p_switch") require(v >= 0.0 && v <= 1.0, "experiment: p_switch grid values must lie in [0, 1]");
  }
}

ExperimentSpec experiment_spec_from_json(const json& j) {
  ConfigReader r(j, "");
  ExperimentSpec spec;
  spec.name = r.string("name", spec.name);
  spec.estimators.clear();
  for (const std::string& name : r.strings("estimators", std::vector<std::string>{"A1", "A2", "A3", "A4"})) {
    try {
      spec.estimators.push_back(estimator_from_name(name));
    } catch (const Error& e) {
      fail(ErrorKind::kUsage, std::string("field 'estimators': ") + e.what());
    }
  }
  if (r.has("test")) {
    const GenerateSpec gen = generate_spec_from_json(r.raw("test"));
    spec.test = gen.scenario;
    require(gen.noise.sigma_w2.fixed() && gen.noise.sigma_v2.fixed(),
            "field 'test.noise': test statistics must be fixed values");
    spec.noise = {gen.noise.sigma_w2.lo, gen.noise.sigma_v2.lo, gen.noise.q2, gen.noise.r2};
  } else {
    r.object("test");
  }
  spec.sweep = r.string("sweep", spec.sweep);
  spec.grid = r.numbers("grid", spec.grid);
  spec.association_seed = static_cast<std::uint64_t>(r.integer("association_seed", 0));
  if (r.has("checkpoints")) {
    ConfigReader c = r.object("checkpoints");
    for (const char* key : {"A3", "A4"}) {
      if (c.has(key)) spec.checkpoints[key] = c.string(key);
    }
    c.finish();
  }
  r.finish();
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kUsage, e.what());
  }
  return spec;
}

json to_json(const ExperimentSpec& spec) {
  json estimators = json::array();
  for (Estimator e : spec.estimators) estimators.push_back(estimator_name(e));
  GenerateSpec gen{spec.test, NoiseSpec::fixed(spec.noise), std::nullopt};
  json j = {{"name", spec.name},
            {"estimators", estimators},
            {"test", to_json(gen)},
            {"sweep", spec.sweep},
            {"grid", spec.grid},
            {"association_seed", spec.association_seed}};
  if (!spec.checkpoints.empty()) j["checkpoints"] = spec.checkpoints;
  return j;
}

std::string config_hash(const json& canonical) {
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentSpec observation_noise_sweep(int trajectories, int steps, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.name = "observation_noise";
  spec.test = test_scenario(trajectories, steps, seed);
  spec.noise = {1e-3, 1e-3, 10.0, 1e3};
  spec.sweep = "inv_sigma_v2_db";
  spec.grid = {15, 20, 25, 30, 35, 40};
  return spec;
}

ExperimentSpec heterogeneity_sweep(int trajectories, int steps, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.name = "heterogeneity";
  spec.test = test_scenario(trajectories, steps, seed);
  spec.noise = {1e-3, 1e-3, 10.0, 1e3};
  spec.sweep = "r2_db";
  spec.grid = {20, 25, 30, 35, 40};
  return spec;
}

ExperimentSpec association_sweep(int trajectories, int steps, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.name = "association";
  spec.estimators = {Estimator::kA1, Estimator::kA3, Estimator::kA4};
  spec.test = test_scenario(trajectories, steps, seed);
  spec.test.landmarks = 10;
  spec.noise = {1e-4, 1e-4, 1.0, 1.0};
  spec.sweep = "p_switch";
  spec.grid = {0.01, 0.03, 0.05};
  spec.association_seed = seed + 1;
  return spec;
}

NoiseConfig cell_noise(const ExperimentSpec& spec, double value) {
  NoiseConfig noise = spec.noise;
  if (spec.sweep == "inv_sigma_v2_db") noise.sigma_v2 = 1.0 / from_db(value);
  if (spec.sweep == "r2_db") noise.r2 = from_db(value);
  return noise;
}

Dataset cell_dataset(const ExperimentSpec& spec, double value) {
  ScenarioConfig scenario = spec.test;
  scenario.p_switch = 0.0;
  Dataset ds = generate_dataset(scenario, NoiseSpec::fixed(cell_noise(spec, value)));
  double p = spec.test.p_switch;
  if (spec.sweep == "p_switch") p = value;
  if (p > 0.0) ds = inject_association_errors(std::move(ds), p, spec.association_seed);
  return ds;
}

std::vector<CellResult> run_experiment(const ExperimentSpec& spec, const std::map<Estimator, LearnedGainFilter*>& models,
                                       const std::function<void(const CellResult&)>& progress) {
  spec.validate();
  const SlamModel system(spec.test.landmarks);
  std::map<Estimator, std::optional<LearnedGainFilter>> loaded;
  auto learned = [&](Estimator e) -> LearnedGainFilter& {
    if (auto it = models.find(e); it != models.end() && it->second) return *it->second;
    auto& slot = loaded[e];
    if (!slot) {
      const auto path = spec.checkpoints.find(estimator_name(e));
      if (path == spec.checkpoints.end()) {
        fail(ErrorKind::kResolution, "no model or checkpoint for estimator " + estimator_name(e));
      }
      slot.emplace(from_checkpoint(system, nn::load_checkpoint(path->second)));
      const GainArchitecture want = e == Estimator::kA3 ? GainArchitecture::kKalmanNet : GainArchitecture::kSplit;
      require(slot->architecture() == want,
              "checkpoint '" + path->second + "' is not an " + estimator_name(e) + " model");
    }
    return *slot;
  };
  for (Estimator e : spec.estimators) {
    if (is_learned(e)) learned(e);
  }

  std::vector<CellResult> rows;
  for (double value : spec.grid) {
    const Dataset ds = cell_dataset(spec, value);
    std::vector<std::vector<VectorXd>> truth;
    truth.reserve(ds.size());
    for (const auto& t : ds.trajectories) truth.push_back(t.states);
    for (Estimator e : spec.estimators) {
      EstimatorRun run;
      switch (e) {
        case Estimator::kA1: run = run_ekf(system, ds, std::nullopt); break;
        case Estimator::kA2: run = run_ekf(system, ds, mismatched_noise()); break;
        default: run = run_learned(learned(e), ds); break;
      }
      CellResult row;
      row.sweep_value = value;
      row.estimator = e;
      row.divergent = run.divergent.size();
      row.runtime_s = run.runtime_s;
      if (run.divergent.size() < ds.size()) {
        row.report = mse_db(system, truth, run.estimates);
      } else {
        row.report.mu_db = std::numeric_limits<double>::quiet_NaN();
        row.report.sigma_db = std::numeric_limits<double>::quiet_NaN();
      }
      if (progress) progress(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string csv_text(const std::vector<CellResult>& rows, const ExperimentSpec& spec) {
  const std::string hash = config_hash(to_json(spec));
  std::ostringstream out;
  out << "sweep,value,estimator,mu_db,sigma_db,perfect,trajectories,divergent,seed,config_hash\n";
  for (const CellResult& r : rows) {
    out << spec.sweep << ',' << format_double(r.sweep_value) << ',' << estimator_name(r.estimator) << ','
        << (r.report.perfect ? std::string("perfect") : format_double(r.report.mu_db)) << ','
        << format_double(r.report.sigma_db) << ',' << (r.report.perfect ? 1 : 0) << ',' << r.report.trajectories
        << ',' << r.divergent << ',' << spec.test.seed << ',' << hash << '\n';
  }
  return out.str();
}

void write_csv(const std::vector<CellResult>& rows, const ExperimentSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kResolution, "cannot write '" + path.string() + "'");
  out << csv_text(rows, spec);
}

json manifest(const std::vector<CellResult>& rows, const ExperimentSpec& spec) {
  json cells = json::array();
  for (const CellResult& r : rows) {
    json cell = {{"value", r.sweep_value},
                 {"estimator", estimator_name(r.estimator)},
                 {"trajectories", r.report.trajectories},
                 {"divergent", r.divergent},
                 {"perfect", r.report.perfect},
                 {"runtime_s", r.runtime_s}};
    cell["mu_db"] = std::isfinite(r.report.mu_db) ? json(r.report.mu_db) : json(nullptr);
    cell["sigma_db"] = std::isfinite(r.report.sigma_db) ? json(r.report.sigma_db) : json(nullptr);
    cells.push_back(cell);
  }
  return {{"spec", to_json(spec)},
          {"config_hash", config_hash(to_json(spec))},
          {"sigma_definition", "sample standard deviation of per-trajectory MSE in dB"},
          {"a2_statistics", {{"sigma_w2", mismatched_noise().sigma_w2},
                             {"sigma_v2", mismatched_noise().sigma_v2},
                             {"q2", mismatched_noise().q2},
                             {"r2", mismatched_noise().r2}}},
          {"cells", cells}};
}

std::string trajectory_csv(const Trajectory& traj, const std::map<std::string, std::vector<VectorXd>>& estimates) {
  std::ostringstream out;
  out << "estimator,step,kind,index,x,y\n";
  const int M = landmark_count_for(traj.initial_state.size());
  auto emit = [&](const std::string& who, int step, const VectorXd& x, const char* pose, const char* landmark) {
    out << who << ',' << step << ',' << pose << ",0," << format_double(x(0)) << ',' << format_double(x(1)) << '\n';
    for (int m = 0; m < M; ++m) {
      out << who << ',' << step << ',' << landmark << ',' << m << ',' << format_double(x(kPoseDim + 2 * m)) << ','
          << format_double(x(kPoseDim + 2 * m + 1)) << '\n';
    }
  };
  for (int t = 0; t < traj.steps(); ++t) emit("truth", t, traj.states[t], "true_pose", "true_landmark");
  for (const auto& [who, xs] : estimates) {
    for (std::size_t t = 0; t < xs.size(); ++t) emit(who, static_cast<int>(t), xs[t], "pose", "landmark");
  }
  return out.str();
}

}  // namespace splitkf

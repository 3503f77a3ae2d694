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

// Command-line front end: generate | train | evaluate | sweep | inspect.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitkf/config.hpp"
#include "splitkf/dataset.hpp"
#include "splitkf/ekf.hpp"
#include "splitkf/error.hpp"
#include "splitkf/experiment.hpp"
#include "splitkf/learned_filter.hpp"
#include "splitkf/neural.hpp"

namespace {

using nlohmann::json;
using namespace splitkf;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--out", c.out, "output path");
}

json config_or_empty(const Common& c) {
  return c.config.empty() ? json::object() : read_config_file(c.config);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kResolution, "cannot write '" + path + "'");
  out << text;
}

void require_out(const Common& c, const char* what) {
  if (c.out.empty()) fail(ErrorKind::kUsage, std::string("--out is required (") + what + ")");
}

void cmd_generate(const Common& c) {
  require_out(c, "dataset path");
  GenerateSpec spec = generate_spec_from_json(config_or_empty(c));
  if (c.seed) spec.scenario.seed = *c.seed;
  const Dataset ds = generate(spec);
  save_dataset(ds, c.out);
  std::cout << json{{"dataset", c.out}, {"trajectories", ds.size()}, {"steps", ds.steps()}}.dump() << '\n';
}

void cmd_train(const Common& c, const std::string& dataset_flag, const std::string& log_path) {
  require_out(c, "checkpoint path");
  TrainSpec spec = train_spec_from_json(config_or_empty(c));
  if (!dataset_flag.empty()) spec.dataset = dataset_flag;
  if (spec.dataset.empty()) fail(ErrorKind::kUsage, "field 'dataset': missing (or pass --dataset)");
  if (c.seed) spec.training.seed = *c.seed;
  const Dataset ds = load_dataset(spec.dataset);
  const SlamModel system(ds.landmarks());
  spec.training.log = [](const std::string& line) { std::cerr << line << '\n'; };
  TrainedModel model = train_model(system, ds, spec);
  json extra = {{"training", to_json(spec)}, {"log", to_json(model.log)}};
  nn::save_checkpoint(to_checkpoint(model.filter, extra), c.out);
  if (!log_path.empty()) write_text(log_path, to_json(model.log).dump(2) + "\n");
  std::cout << json{{"checkpoint", c.out},
                    {"estimator", spec.estimator},
                    {"epochs_run", model.log.epochs.size()},
                    {"converged", model.log.converged}}
                   .dump()
            << '\n';
}

struct EvaluateFlags {
  std::string estimator;
  std::string dataset;
  std::string checkpoint;
  std::string trajectory_csv;
  int trajectory_index{0};
};

void cmd_evaluate(const Common& c, EvaluateFlags f) {
  const json cfg = config_or_empty(c);
  ConfigReader r(cfg, "");
  if (f.estimator.empty()) f.estimator = r.string("estimator", std::string());
  else r.string("estimator", std::string());
  if (f.dataset.empty()) f.dataset = r.string("dataset", std::string());
  else r.string("dataset", std::string());
  if (f.checkpoint.empty()) f.checkpoint = r.string("checkpoint", std::string());
  else r.string("checkpoint", std::string());
  r.finish();
  if (f.estimator.empty()) fail(ErrorKind::kUsage, "field 'estimator': missing (or pass --estimator)");
  if (f.dataset.empty()) fail(ErrorKind::kUsage, "field 'dataset': missing (or pass --dataset)");
  Estimator est;
  try {
    est = estimator_from_name(f.estimator);
  } catch (const Error& e) {
    fail(ErrorKind::kUsage, e.what());
  }
  const Dataset ds = load_dataset(f.dataset);
  const SlamModel system(ds.landmarks());
  EstimatorRun run;
  std::optional<LearnedGainFilter> filter;
  if (is_learned(est)) {
    if (f.checkpoint.empty()) fail(ErrorKind::kResolution, "estimator " + f.estimator + " needs a checkpoint");
    filter.emplace(from_checkpoint(system, nn::load_checkpoint(f.checkpoint)));
    run = run_learned(*filter, ds);
  } else {
    run = run_ekf(system, ds, est == Estimator::kA1 ? std::nullopt : std::optional<NoiseConfig>(mismatched_noise()));
  }
  std::vector<std::vector<VectorXd>> truth;
  for (const auto& t : ds.trajectories) truth.push_back(t.states);
  json report = {{"estimator", f.estimator}, {"dataset", f.dataset}, {"divergent", run.divergent.size()},
                 {"runtime_s", run.runtime_s}};
  if (run.divergent.size() < ds.size()) {
    const MseReport m = mse_db(system, truth, run.estimates);
    report["trajectories"] = m.trajectories;
    if (m.perfect) {
      report["mu_db"] = "perfect";
    } else {
      report["mu_db"] = m.mu_db;
    }
    report["sigma_db"] = m.sigma_db;
  } else {
    report["mu_db"] = nullptr;
  }
  if (c.seed) report["seed"] = *c.seed;
  write_text(c.out, report.dump(2) + "\n");
  if (!f.trajectory_csv.empty()) {
    if (f.trajectory_index < 0 || static_cast<std::size_t>(f.trajectory_index) >= ds.size()) {
      fail(ErrorKind::kUsage, "--trajectory-index out of range");
    }
    const auto i = static_cast<std::size_t>(f.trajectory_index);
    std::map<std::string, std::vector<VectorXd>> estimates;
    if (!run.estimates[i].empty()) estimates[f.estimator] = run.estimates[i];
    write_text(f.trajectory_csv, trajectory_csv(ds.trajectories[i], estimates));
  }
}

void cmd_sweep(const Common& c, const std::string& preset, int trajectories, int steps) {
  require_out(c, "CSV path");
  ExperimentSpec spec;
  if (!preset.empty()) {
    const std::uint64_t seed = c.seed.value_or(7);
    if (preset == "observation_noise") spec = observation_noise_sweep(trajectories, steps, seed);
    else if (preset == "heterogeneity") spec = heterogeneity_sweep(trajectories, steps, seed);
    else if (preset == "association") spec = association_sweep(trajectories, steps, seed);
    else fail(ErrorKind::kUsage, "unknown preset '" + preset + "'");
    if (!c.config.empty()) {
      // Preset plus checkpoints from a config.
      ConfigReader r(read_config_file(c.config), "");
      ConfigReader ck = r.object("checkpoints");
      for (const char* key : {"A3", "A4"}) {
        if (ck.has(key)) spec.checkpoints[key] = ck.string(key);
      }
      ck.finish();
      r.finish();
    }
  } else {
    if (c.config.empty()) fail(ErrorKind::kUsage, "sweep needs --config or --preset");
    spec = experiment_spec_from_json(read_config_file(c.config));
    if (c.seed) spec.test.seed = *c.seed;
  }
  const auto rows = run_experiment(spec, {}, [](const CellResult& r) {
    std::cerr << "value " << r.sweep_value << " " << estimator_name(r.estimator) << " mu " << r.report.mu_db
              << " dB\n";
  });
  write_csv(rows, spec, c.out);
  write_text(c.out + ".manifest.json", manifest(rows, spec).dump(2) + "\n");
  std::cout << json{{"csv", c.out}, {"rows", rows.size()}, {"config_hash", config_hash(to_json(spec))}}.dump()
            << '\n';
}

void cmd_inspect(const Common& c, const std::string& target) {
  std::string path = target.empty() ? c.config : target;
  if (path.empty()) fail(ErrorKind::kUsage, "inspect needs a file argument");
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kResolution, "cannot open '" + path + "'");
  std::string first;
  std::getline(in, first);
  json header;
  try {
    header = json::parse(first);
  } catch (const json::exception&) {
    fail(ErrorKind::kFormat, "'" + path + "' does not start with a JSON header line");
  }
  json info;
  const std::string format = header.value("format", std::string());
  if (format == "splitkf.dataset") {
    info = header;
  } else if (format == "splitkf.checkpoint") {
    const nn::Checkpoint ckpt = nn::load_checkpoint(path);
    info = ckpt.header;
    info["payload_count"] = ckpt.payload.size();
    if (info.contains("normalization")) info.erase("normalization");
  } else {
    fail(ErrorKind::kFormat, "'" + path + "' is neither a dataset nor a checkpoint");
  }
  write_text(c.out, info.dump(2) + "\n");
}

int report_error(ErrorKind kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", to_string(kind)}, {"message", message}}}}.dump() << '\n';
  return kind == ErrorKind::kUsage ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splitkf: learned-gain filtering for range-bearing SLAM"};
  app.require_subcommand(1);
  Common gen_c, train_c, eval_c, sweep_c, inspect_c;

  auto* gen = app.add_subcommand("generate", "write a dataset from a config");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "train an A3 or A4 model");
  add_common(train, train_c);
  std::string train_dataset, train_log;
  train->add_option("--dataset", train_dataset, "dataset path (overrides the config)");
  train->add_option("--log", train_log, "write the training log as JSON");

  auto* eval = app.add_subcommand("evaluate", "run one estimator on one dataset");
  add_common(eval, eval_c);
  EvaluateFlags eval_f;
  eval->add_option("--estimator", eval_f.estimator, "A1, A2, A3 or A4");
  eval->add_option("--dataset", eval_f.dataset, "dataset path");
  eval->add_option("--checkpoint", eval_f.checkpoint, "checkpoint for A3/A4");
  eval->add_option("--trajectory-csv", eval_f.trajectory_csv, "write one trajectory's estimates as CSV");
  eval->add_option("--trajectory-index", eval_f.trajectory_index, "trajectory for --trajectory-csv");

  auto* sweep = app.add_subcommand("sweep", "run an experiment grid");
  add_common(sweep, sweep_c);
  std::string preset;
  int sweep_l = 500, sweep_t = 50;
  sweep->add_option("--preset", preset, "observation_noise | heterogeneity | association");
  sweep->add_option("--trajectories", sweep_l, "test trajectories per cell (presets)");
  sweep->add_option("--steps", sweep_t, "steps per test trajectory (presets)");

  auto* inspect = app.add_subcommand("inspect", "print dataset or checkpoint metadata");
  add_common(inspect, inspect_c);
  std::string target;
  inspect->add_option("path", target, "dataset or checkpoint file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorKind::kUsage, e.what());
  }

  try {
    if (*gen) cmd_generate(gen_c);
    else if (*train) cmd_train(train_c, train_dataset, train_log);
    else if (*eval) cmd_evaluate(eval_c, eval_f);
    else if (*sweep) cmd_sweep(sweep_c, preset, sweep_l, sweep_t);
    else if (*inspect) cmd_inspect(inspect_c, target);
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::kNumerical, e.what());
  }
  return 0;
}

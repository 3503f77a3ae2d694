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

#include "splitkf/learned_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitkf/error.hpp"
#include "splitkf/rng.hpp"

namespace splitkf {

std::string architecture_tag(GainArchitecture arch) { return arch == GainArchitecture::kKalmanNet ? "A3" : "A4"; }

const char* factor_form_name(FactorForm form) { return form == FactorForm::kGram ? "gram" : "linear"; }

FactorForm factor_form_from_name(const std::string& name) {
  if (name == "gram") return FactorForm::kGram;
  if (name == "linear") return FactorForm::kLinear;
  fail(ErrorKind::kInvalidArgument, "unknown factor form '" + name + "'");
}

LearnedGainFilter::LearnedGainFilter(const StateSpaceModel& system, GainArchitecture arch,
                                     std::vector<nn::RecurrentGainNet> nets, std::vector<FeatureRouting> routing,
                                     FeatureNormalization norm)
    : system_(&system), arch_(arch), nets_(std::move(nets)), routing_(std::move(routing)) {
  const std::size_t expected = arch == GainArchitecture::kKalmanNet ? 1 : 2;
  require(nets_.size() == expected && routing_.size() == expected,
          "LearnedGainFilter: " + architecture_tag(arch) + " needs " + std::to_string(expected) + " network(s)");
  const Eigen::Index n = system.state_dim();
  const Eigen::Index m = system.measurement_dim();
  for (std::size_t j = 0; j < nets_.size(); ++j) {
    const nn::NetShape& s = nets_[j].shape();
    require(s.input_dim == routed_size(routing_[j], n, m),
            "LearnedGainFilter: network " + std::to_string(j) + " input size does not match its feature routing");
    Eigen::Index rows = n, cols = m;
    if (arch == GainArchitecture::kSplit) rows = cols = (j == 0 ? n : m);
    require(s.output_rows == rows && s.output_cols == cols,
            "LearnedGainFilter: network " + std::to_string(j) + " output shape does not match the gain factor");
  }
  set_normalization(std::move(norm));
}

void LearnedGainFilter::set_normalization(FeatureNormalization norm) {
  const Eigen::Index n = system_->state_dim();
  const Eigen::Index m = system_->measurement_dim();
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    const Eigen::Index size = feature_group_size(static_cast<FeatureGroup>(g), n, m);
    require(norm.mean[g].size() == size && norm.scale[g].size() == size,
            "LearnedGainFilter: normalization does not match the model dimensions");
  }
  require(norm.state_scale.size() == n && norm.innovation_scale.size() == m,
          "LearnedGainFilter: output scales do not match the model dimensions");
  norm_ = std::move(norm);
}

LearnedGainFilter::Factors LearnedGainFilter::decode(const std::vector<MatrixXd>& raw) const {
  const auto& sx = norm_.state_scale;
  const VectorXd inv_sy = norm_.innovation_scale.cwiseInverse();
  if (arch_ == GainArchitecture::kKalmanNet) {
    return {sx.asDiagonal() * raw[0] * inv_sy.asDiagonal()};
  }
  if (form_ == FactorForm::kGram) {
    return {sx.asDiagonal() * (raw[0] * raw[0].transpose()) * sx.asDiagonal(),
            inv_sy.asDiagonal() * (raw[1] * raw[1].transpose()) * inv_sy.asDiagonal()};
  }
  return {sx.asDiagonal() * raw[0] * sx.asDiagonal(), inv_sy.asDiagonal() * raw[1] * inv_sy.asDiagonal()};
}

MatrixXd LearnedGainFilter::compose(const Factors& factors, const MatrixXd& H) const {
  if (arch_ == GainArchitecture::kKalmanNet) return factors.at(0);
  const MatrixXd& g1 = factors.at(0);
  const MatrixXd& g2 = factors.at(1);
  require(g1.rows() == g1.cols() && g1.cols() == H.cols() && g2.rows() == g2.cols() && g2.rows() == H.rows(),
          "compose: factor shapes do not match the measurement Jacobian");
  return g1 * H.transpose() * g2;
}

namespace {

struct StepRecord {
  VectorXd prior;
  VectorXd posterior;
  VectorXd innovation;
  MatrixXd H;
  MatrixXd K;
  LearnedGainFilter::Factors factors;
  std::vector<MatrixXd> raw;
};

}  // namespace

LearnedGainFilter::Pass LearnedGainFilter::evaluate(std::span<const Sequence* const> batch,
                                                    const PassOptions& options) {
  require(!batch.empty(), "evaluate: empty batch");
  const StateSpaceModel& sys = *system_;
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.measurement_dim();
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int T = batch[0]->steps();
  const bool need_loss = options.want_gradient || !batch[0]->states.empty();
  for (const Sequence* s : batch) {
    require(s->steps() == T && static_cast<int>(s->measurements.size()) == T,
            "evaluate: sequences in a batch must have equal length");
    require(s->initial_mean.size() == n, "evaluate: initial mean dimension mismatch");
    if (need_loss) require(static_cast<int>(s->states.size()) == T, "evaluate: ground-truth states required");
  }
  const std::size_t J = nets_.size();
  std::vector<bool> trainable = options.trainable;
  if (trainable.empty()) trainable.assign(J, true);
  require(trainable.size() == J, "evaluate: trainable mask has wrong length");
  const bool use_nets = options.source == nullptr;
  const bool record = options.want_gradient || options.want_gain_adjoints;

  // ---- forward ----
  std::vector<FeatureExtractor> extractors;
  extractors.reserve(batch.size());
  for (const Sequence* s : batch) extractors.emplace_back(sys, s->initial_mean);
  if (use_nets) {
    for (auto& net : nets_) net.reset(B);
  }
  std::vector<std::vector<StepRecord>> records(batch.size(), std::vector<StepRecord>(record ? T : 0));
  std::vector<std::vector<nn::RecurrentGainNet::StepTape>> tapes(J, std::vector<nn::RecurrentGainNet::StepTape>(
                                                                        record && use_nets ? T : 0));
  Pass pass;
  if (options.keep_estimates) pass.estimates.assign(batch.size(), {});
  double loss_sum = 0.0;

  std::vector<VectorXd> priors(batch.size()), innovations(batch.size());
  std::vector<MatrixXd> jacobians(batch.size());
  std::vector<MatrixXd> inputs(J);
  for (std::size_t j = 0; j < J; ++j) inputs[j].resize(nets_[j].shape().input_dim, B);

  for (int t = 0; t < T; ++t) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const Sequence& s = *batch[b];
      FeatureExtractor& ex = extractors[b];
      priors[b] = sys.transition(ex.posterior(), s.inputs[t]);
      const VectorXd predicted = sys.observe(priors[b]);
      jacobians[b] = sys.observation_jacobian(priors[b]);
      innovations[b] = sys.measurement_difference(s.measurements[t], predicted);
      if (use_nets) {
        const RawFeatures raw = ex.compute(priors[b], predicted, jacobians[b], s.measurements[t]);
        for (std::size_t j = 0; j < J; ++j) inputs[j].col(b) = norm_.assemble(raw, routing_[j]);
      }
    }
    std::vector<MatrixXd> outputs(J);
    if (use_nets) {
      for (std::size_t j = 0; j < J; ++j) {
        outputs[j] = nets_[j].forward(inputs[j], record ? &tapes[j][t] : nullptr);
      }
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      Factors factors;
      if (use_nets) {
        std::vector<MatrixXd> raw(J);
        for (std::size_t j = 0; j < J; ++j) {
          raw[j] = nn::reshape_output(outputs[j], b, nets_[j].shape().output_rows, nets_[j].shape().output_cols);
        }
        factors = decode(raw);
        if (record) records[b][t].raw = std::move(raw);
      } else {
        factors = (*options.source)(static_cast<std::size_t>(b), t, priors[b], jacobians[b]);
      }
      MatrixXd K = compose(factors, jacobians[b]);
      VectorXd post = priors[b] + K * innovations[b];
      sys.normalize_state(post);
      if (!post.allFinite()) {
        fail(ErrorKind::kDivergence, "learned filter produced non-finite estimate at step " + std::to_string(t));
      }
      if (need_loss) loss_sum += sys.state_difference(post, batch[b]->states[t]).squaredNorm();
      if (options.keep_estimates) pass.estimates[b].push_back(post);
      extractors[b].advance(priors[b], post, batch[b]->measurements[t]);
      if (record) {
        StepRecord& r = records[b][t];
        r.prior = priors[b];
        r.posterior = post;
        r.innovation = innovations[b];
        r.H = jacobians[b];
        r.K = std::move(K);
        r.factors = std::move(factors);
      }
    }
  }
  const double norm_factor = 1.0 / (static_cast<double>(T) * static_cast<double>(B));
  pass.loss = loss_sum * norm_factor;
  if (!std::isfinite(pass.loss)) fail(ErrorKind::kDivergence, "learned filter loss is not finite");
  if (!record) return pass;

  // ---- reverse ----
  if (options.want_gradient) {
    pass.gradients.resize(J);
    for (std::size_t j = 0; j < J; ++j) pass.gradients[j] = VectorXd::Zero(nets_[j].parameter_count());
  }
  if (options.want_gain_adjoints) pass.gain_adjoints.assign(batch.size(), std::vector<MatrixXd>(T));

  std::vector<std::vector<VectorXd>> a_post(batch.size()), a_prior(batch.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    a_post[b].resize(T);
    a_prior[b].assign(T, VectorXd::Zero(n));
    for (int t = 0; t < T; ++t) {
      a_post[b][t] = 2.0 * norm_factor * sys.state_difference(records[b][t].posterior, batch[b]->states[t]);
    }
  }
  std::vector<MatrixXd> d_hidden(J);
  std::vector<MatrixXd> d_out(J);
  std::vector<MatrixXd> d_in(J);
  std::vector<VectorXd> a_dy(batch.size());
  std::vector<MatrixXd> a_H(batch.size());

  const VectorXd& sx = norm_.state_scale;
  const VectorXd inv_sy = norm_.innovation_scale.cwiseInverse();

  for (int t = T - 1; t >= 0; --t) {
    for (std::size_t j = 0; j < J; ++j) d_out[j] = MatrixXd::Zero(nets_[j].shape().output_size(), B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const StepRecord& r = records[b][t];
      const VectorXd& ap = a_post[b][t];
      a_prior[b][t] += ap;
      const MatrixXd dK = ap * r.innovation.transpose();
      if (options.want_gain_adjoints) pass.gain_adjoints[b][t] = dK;
      a_dy[b] = r.K.transpose() * ap;
      a_H[b] = MatrixXd::Zero(m, n);
      if (arch_ == GainArchitecture::kKalmanNet) {
        if (use_nets) d_out[0].col(b) = nn::flatten_row_major(sx.asDiagonal() * dK * inv_sy.asDiagonal());
      } else {
        const MatrixXd& g1 = r.factors[0];
        const MatrixXd& g2 = r.factors[1];
        a_H[b] += g2 * dK.transpose() * g1;
        if (use_nets) {
          const MatrixXd dG1 = dK * g2.transpose() * r.H;
          const MatrixXd dG2 = r.H * g1.transpose() * dK;
          MatrixXd dN1 = sx.asDiagonal() * dG1 * sx.asDiagonal();
          MatrixXd dN2 = inv_sy.asDiagonal() * dG2 * inv_sy.asDiagonal();
          if (form_ == FactorForm::kGram) {
            dN1 = (dN1 + dN1.transpose()) * r.raw[0];
            dN2 = (dN2 + dN2.transpose()) * r.raw[1];
          }
          d_out[0].col(b) = nn::flatten_row_major(dN1);
          d_out[1].col(b) = nn::flatten_row_major(dN2);
        }
      }
    }
    if (use_nets) {
      for (std::size_t j = 0; j < J; ++j) {
        VectorXd* grad = options.want_gradient && trainable[j] ? &pass.gradients[j] : nullptr;
        nets_[j].backward_step(tapes[j][t], d_out[j], d_hidden[j], &d_in[j], grad);
      }
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      const StepRecord& r = records[b][t];
      if (use_nets) {
        for (std::size_t j = 0; j < J; ++j) {
          Eigen::Index offset = 0;
          for (FeatureGroup g : routing_[j]) {
            const int k = static_cast<int>(g);
            const Eigen::Index size = feature_group_size(g, n, m);
            const VectorXd a = d_in[j].col(b).segment(offset, size).cwiseQuotient(norm_.scale[k]);
            offset += size;
            switch (g) {
              case FeatureGroup::kStateUpdate:
                if (t > 0) {
                  a_post[b][t - 1] += a;
                  a_prior[b][t - 1] -= a;
                }
                break;
              case FeatureGroup::kStateEvolution:
                if (t > 0) a_post[b][t - 1] += a;
                if (t > 1) a_post[b][t - 2] -= a;
                break;
              case FeatureGroup::kInnovation:
                a_dy[b] += a;
                break;
              case FeatureGroup::kObservation:
                break;
              case FeatureGroup::kLinearization:
                // d(h(p) - H(p) p) = -(dH[dp]) p; the H dp terms cancel.
                a_H[b].noalias() -= a * r.prior.transpose();
                break;
              case FeatureGroup::kJacobian:
                a_H[b] += nn::reshape_output(a, 0, static_cast<int>(m), static_cast<int>(n));
                break;
            }
          }
        }
      }
      VectorXd& apr = a_prior[b][t];
      apr.noalias() -= r.H.transpose() * a_dy[b];
      if (a_H[b].cwiseAbs().maxCoeff() > 0.0) apr += sys.observation_jacobian_vjp(r.prior, a_H[b]);
      if (t > 0) {
        const MatrixXd F = sys.transition_jacobian(records[b][t - 1].posterior, batch[b]->inputs[t]);
        a_post[b][t - 1].noalias() += F.transpose() * apr;
      }
    }
  }
  return pass;
}

std::vector<VectorXd> LearnedGainFilter::run(const Sequence& seq) {
  const Sequence* ptr = &seq;
  PassOptions opts;
  opts.keep_estimates = true;
  return evaluate({&ptr, 1}, opts).estimates.at(0);
}

std::vector<std::vector<VectorXd>> LearnedGainFilter::run_all(std::span<const Sequence> seqs,
                                                              std::size_t batch_size) {
  std::vector<std::vector<VectorXd>> out;
  out.reserve(seqs.size());
  PassOptions opts;
  opts.keep_estimates = true;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    std::vector<const Sequence*> batch;
    for (std::size_t i = start; i < std::min(seqs.size(), start + batch_size); ++i) batch.push_back(&seqs[i]);
    Pass p = evaluate(batch, opts);
    for (auto& e : p.estimates) out.push_back(std::move(e));
  }
  return out;
}

void LearnedGainFilter::begin(const VectorXd& initial_mean) {
  require(initial_mean.size() == system_->state_dim(), "begin: initial mean dimension mismatch");
  online_.emplace(*system_, initial_mean);
  for (auto& net : nets_) net.reset(1);
}

std::vector<VectorXd> LearnedGainFilter::step_features(const VectorXd& prior, const VectorXd& y) const {
  require(online_.has_value(), "step_features: begin() was not called");
  const VectorXd predicted = system_->observe(prior);
  const RawFeatures raw = online_->compute(prior, predicted, system_->observation_jacobian(prior), y);
  std::vector<VectorXd> out;
  for (const auto& r : routing_) out.push_back(norm_.assemble(raw, r));
  return out;
}

VectorXd LearnedGainFilter::step(const MotionInput& input, const VectorXd& y) {
  require(online_.has_value(), "step: begin() was not called");
  require(y.size() == system_->measurement_dim(), "step: measurement dimension mismatch");
  const VectorXd prior = system_->transition(online_->posterior(), input);
  const MatrixXd H = system_->observation_jacobian(prior);
  const VectorXd innovation = system_->measurement_difference(y, system_->observe(prior));
  const std::vector<VectorXd> features = step_features(prior, y);
  std::vector<MatrixXd> raw;
  for (std::size_t j = 0; j < nets_.size(); ++j) raw.push_back(nets_[j].forward_step(features[j]));
  VectorXd post = prior + compose(decode(raw), H) * innovation;
  system_->normalize_state(post);
  if (!post.allFinite()) fail(ErrorKind::kDivergence, "learned filter produced non-finite estimate");
  online_->advance(prior, post, y);
  return post;
}

double mean_loss(LearnedGainFilter& filter, std::span<const Sequence> seqs, std::size_t batch_size) {
  require(!seqs.empty(), "mean_loss: no sequences");
  double total = 0.0;
  LearnedGainFilter::PassOptions opts;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    std::vector<const Sequence*> batch;
    for (std::size_t i = start; i < std::min(seqs.size(), start + batch_size); ++i) batch.push_back(&seqs[i]);
    total += filter.evaluate(batch, opts).loss * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(seqs.size());
}

double train_epoch(LearnedGainFilter& filter, std::span<const Sequence> train, const std::vector<bool>& trainable,
                   std::vector<nn::Adam>& optimizers, int batch_size, std::uint64_t seed, std::uint32_t epoch_index,
                   const std::string& phase) {
  require(!train.empty() && batch_size >= 1, "train_epoch: empty training set or bad batch size");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream rng(seed, stream_id(StreamPurpose::kShuffle, epoch_index));
  rng.shuffle(std::span<std::size_t>(order));

  LearnedGainFilter::PassOptions opts;
  opts.want_gradient = true;
  opts.trainable = trainable;
  double total = 0.0;
  int batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size), ++batch_index) {
    std::vector<const Sequence*> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) batch.push_back(&train[order[i]]);
    LearnedGainFilter::Pass pass;
    try {
      pass = filter.evaluate(batch, opts);
    } catch (const Error& e) {
      fail(ErrorKind::kTraining, "phase " + phase + ", epoch " + std::to_string(epoch_index) + ", batch " +
                                     std::to_string(batch_index) + ": " + e.what());
    }
    for (std::size_t j = 0; j < filter.nets().size(); ++j) {
      if (!trainable[j]) continue;
      try {
        optimizers[j].step(filter.nets()[j].parameters(), pass.gradients[j], filter.nets()[j].segments());
      } catch (const Error& e) {
        fail(ErrorKind::kTraining, "phase " + phase + ", epoch " + std::to_string(epoch_index) + ", batch " +
                                       std::to_string(batch_index) + ", net " + std::to_string(j) + ": " + e.what());
      }
    }
    total += pass.loss * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(train.size());
}

std::pair<std::span<const Sequence>, std::span<const Sequence>> split_validation(std::span<const Sequence> all,
                                                                                 double fraction) {
  require(fraction >= 0.0 && fraction < 1.0, "split_validation: fraction must lie in [0, 1)");
  auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(all.size())));
  if (fraction > 0.0 && held == 0) held = 1;
  require(held < all.size(), "split_validation: validation split leaves no training data");
  return {all.first(all.size() - held), all.last(held)};
}

nn::Checkpoint to_checkpoint(const LearnedGainFilter& filter, const nlohmann::json& extra) {
  nn::Checkpoint ckpt;
  ckpt.header = extra;
  ckpt.header["architecture"] = architecture_tag(filter.architecture());
  ckpt.header["state_dim"] = filter.system().state_dim();
  ckpt.header["measurement_dim"] = filter.system().measurement_dim();
  nlohmann::json nets = nlohmann::json::array();
  Eigen::Index total = 0;
  for (std::size_t j = 0; j < filter.nets().size(); ++j) {
    nlohmann::json routing = nlohmann::json::array();
    for (FeatureGroup g : filter.routing()[j]) routing.push_back(feature_group_name(g));
    nets.push_back({{"shape", nn::shape_to_json(filter.nets()[j].shape())},
                    {"routing", routing},
                    {"parameter_count", filter.nets()[j].parameter_count()}});
    total += filter.nets()[j].parameter_count();
  }
  ckpt.header["nets"] = nets;
  ckpt.header["factor_form"] = factor_form_name(filter.factor_form());
  ckpt.header["normalization"] = filter.normalization().to_json();
  ckpt.payload.resize(total);
  Eigen::Index offset = 0;
  for (const auto& net : filter.nets()) {
    ckpt.payload.segment(offset, net.parameter_count()) = net.parameters();
    offset += net.parameter_count();
  }
  return ckpt;
}

LearnedGainFilter from_checkpoint(const StateSpaceModel& system, const nn::Checkpoint& ckpt) {
  try {
    const std::string tag = ckpt.header.at("architecture").get<std::string>();
    if (tag != "A3" && tag != "A4") fail(ErrorKind::kFormat, "checkpoint has unknown architecture '" + tag + "'");
    const GainArchitecture arch = tag == "A3" ? GainArchitecture::kKalmanNet : GainArchitecture::kSplit;
    if (ckpt.header.at("state_dim").get<Eigen::Index>() != system.state_dim() ||
        ckpt.header.at("measurement_dim").get<Eigen::Index>() != system.measurement_dim()) {
      fail(ErrorKind::kInvalidArgument, "checkpoint dimensions do not match the scenario");
    }
    std::vector<nn::RecurrentGainNet> nets;
    std::vector<FeatureRouting> routing;
    Eigen::Index offset = 0;
    for (const auto& entry : ckpt.header.at("nets")) {
      nn::RecurrentGainNet net(nn::shape_from_json(entry.at("shape")));
      FeatureRouting r;
      for (const auto& name : entry.at("routing")) r.push_back(feature_group_from_name(name.get<std::string>()));
      if (offset + net.parameter_count() > ckpt.payload.size()) fail(ErrorKind::kFormat, "checkpoint payload too short");
      net.parameters() = ckpt.payload.segment(offset, net.parameter_count());
      offset += net.parameter_count();
      nets.push_back(std::move(net));
      routing.push_back(std::move(r));
    }
    if (offset != ckpt.payload.size()) fail(ErrorKind::kFormat, "checkpoint payload size mismatch");
    LearnedGainFilter filter(system, arch, std::move(nets), std::move(routing),
                             FeatureNormalization::from_json(ckpt.header.at("normalization")));
    filter.set_factor_form(factor_form_from_name(ckpt.header.value("factor_form", std::string("linear"))));
    return filter;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace splitkf

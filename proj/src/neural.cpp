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

#include "splitkf/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "splitkf/error.hpp"
#include "splitkf/rng.hpp"

namespace splitkf::nn {

namespace {

enum Slot : int {
  kEmbedW, kEmbedB,
  kWr, kWz, kWn,
  kUr, kUz, kUn,
  kBr, kBz, kBn, kCn,
  kHeadW, kHeadB,
  kSlotCount
};

MatrixXd sigmoid(const MatrixXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

}  // namespace

RecurrentGainNet::RecurrentGainNet(const NetShape& shape) : shape_(shape) {
  require(shape.input_dim >= 1 && shape.embed_dim >= 1 && shape.hidden_dim >= 1 && shape.output_rows >= 1 &&
              shape.output_cols >= 1,
          "RecurrentGainNet: all dimensions must be positive");
  const Index in = shape.input_dim, E = shape.embed_dim, H = shape.hidden_dim, O = shape.output_size();
  const std::vector<std::tuple<const char*, Index, Index>> layout = {
      {"embed.W", E, in}, {"embed.b", E, 1},  {"gru.W_r", H, E}, {"gru.W_z", H, E}, {"gru.W_n", H, E},
      {"gru.U_r", H, H},  {"gru.U_z", H, H},  {"gru.U_n", H, H}, {"gru.b_r", H, 1}, {"gru.b_z", H, 1},
      {"gru.b_n", H, 1},  {"gru.c_n", H, 1},  {"head.W", O, H},  {"head.b", O, 1}};
  Index offset = 0;
  for (const auto& [name, rows, cols] : layout) {
    segments_.push_back({name, offset, rows, cols});
    offset += rows * cols;
  }
  params_ = VectorXd::Zero(offset);
  reset(1);
}

RecurrentGainNet::ConstMap RecurrentGainNet::param(int k) const {
  const ParamSegment& s = segments_[k];
  return ConstMap(params_.data() + s.offset, s.rows, s.cols);
}

RecurrentGainNet::Map RecurrentGainNet::grad_view(VectorXd& grad, int k) const {
  const ParamSegment& s = segments_[k];
  return Map(grad.data() + s.offset, s.rows, s.cols);
}

void RecurrentGainNet::init_uniform(std::uint64_t seed, std::uint32_t stream_index) {
  RandomStream rng(seed, stream_id(StreamPurpose::kParameters, stream_index));
  const double in = shape_.input_dim, E = shape_.embed_dim, H = shape_.hidden_dim;
  for (int k = 0; k < kSlotCount; ++k) {
    double fan_in = H;
    if (k == kEmbedW || k == kEmbedB) fan_in = in;
    if (k == kWr || k == kWz || k == kWn) fan_in = E;
    const double bound = 1.0 / std::sqrt(fan_in);
    const ParamSegment& s = segments_[k];
    for (Index i = 0; i < s.rows * s.cols; ++i) params_(s.offset + i) = rng.uniform(-bound, bound);
  }
}

void RecurrentGainNet::set_head(double weight_scale, const VectorXd& bias) {
  if (bias.size() != shape_.output_size()) {
    fail(ErrorKind::kInvalidArgument, "set_head: bias has " + std::to_string(bias.size()) + " entries, expected " +
                                          std::to_string(shape_.output_size()));
  }
  const ParamSegment& w = segments_[kHeadW];
  params_.segment(w.offset, w.rows * w.cols) *= weight_scale;
  params_.segment(segments_[kHeadB].offset, bias.size()) = bias;
}

void RecurrentGainNet::reset(Index batch) { hidden_ = MatrixXd::Zero(shape_.hidden_dim, batch); }

MatrixXd RecurrentGainNet::forward(const MatrixXd& inputs, StepTape* tape) {
  if (inputs.rows() != shape_.input_dim) {
    fail(ErrorKind::kInvalidArgument, "RecurrentGainNet: expected " + std::to_string(shape_.input_dim) +
                                          " input features, got " + std::to_string(inputs.rows()));
  }
  if (hidden_.cols() != inputs.cols()) {
    fail(ErrorKind::kInvalidArgument, "RecurrentGainNet: batch size differs from the hidden state's");
  }
  MatrixXd embed = param(kEmbedW) * inputs;
  embed.colwise() += param(kEmbedB).col(0);
  if (shape_.embed_activation == Activation::kTanh) embed = embed.array().tanh().matrix();

  MatrixXd pre_r = param(kWr) * embed + param(kUr) * hidden_;
  pre_r.colwise() += param(kBr).col(0);
  MatrixXd pre_z = param(kWz) * embed + param(kUz) * hidden_;
  pre_z.colwise() += param(kBz).col(0);
  MatrixXd rec_n = param(kUn) * hidden_;
  rec_n.colwise() += param(kCn).col(0);
  const MatrixXd r = sigmoid(pre_r);
  const MatrixXd z = sigmoid(pre_z);
  MatrixXd pre_n = param(kWn) * embed + r.cwiseProduct(rec_n);
  pre_n.colwise() += param(kBn).col(0);
  const MatrixXd n = pre_n.array().tanh().matrix();
  MatrixXd h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(hidden_);

  MatrixXd out = param(kHeadW) * h;
  out.colwise() += param(kHeadB).col(0);

  if (tape) {
    tape->input = inputs;
    tape->embed = std::move(embed);
    tape->h_prev = hidden_;
    tape->reset = r;
    tape->update = z;
    tape->candidate = n;
    tape->recurrent_candidate = std::move(rec_n);
    tape->h = h;
  }
  hidden_ = std::move(h);
  return out;
}

MatrixXd RecurrentGainNet::forward_step(const VectorXd& features) {
  if (hidden_.cols() != 1) reset(1);
  const MatrixXd out = forward(features);
  return reshape_output(out, 0, shape_.output_rows, shape_.output_cols);
}

void RecurrentGainNet::backward_step(const StepTape& tape, const MatrixXd& d_output, MatrixXd& d_hidden,
                                     MatrixXd* d_input, VectorXd* grad) const {
  if (d_output.rows() != shape_.output_size() || d_output.cols() != tape.h.cols()) {
    fail(ErrorKind::kInvalidArgument, "backward_step: output adjoint shape mismatch");
  }
  if (d_hidden.size() == 0) d_hidden = MatrixXd::Zero(tape.h.rows(), tape.h.cols());
  MatrixXd dh = d_hidden + param(kHeadW).transpose() * d_output;

  const auto& z = tape.update;
  const auto& r = tape.reset;
  const auto& n = tape.candidate;
  const MatrixXd dn = dh.cwiseProduct((1.0 - z.array()).matrix());
  const MatrixXd dz = dh.cwiseProduct(tape.h_prev - n);
  MatrixXd dh_prev = dh.cwiseProduct(z);

  const MatrixXd dn_pre = dn.cwiseProduct((1.0 - n.array().square()).matrix());
  const MatrixXd dq = dn_pre.cwiseProduct(r);
  const MatrixXd dr_pre = dn_pre.cwiseProduct(tape.recurrent_candidate)
                              .cwiseProduct((r.array() * (1.0 - r.array())).matrix());
  const MatrixXd dz_pre = dz.cwiseProduct((z.array() * (1.0 - z.array())).matrix());

  dh_prev.noalias() += param(kUn).transpose() * dq;
  dh_prev.noalias() += param(kUz).transpose() * dz_pre;
  dh_prev.noalias() += param(kUr).transpose() * dr_pre;

  MatrixXd de = param(kWr).transpose() * dr_pre;
  de.noalias() += param(kWz).transpose() * dz_pre;
  de.noalias() += param(kWn).transpose() * dn_pre;
  MatrixXd da = shape_.embed_activation == Activation::kTanh
                    ? MatrixXd(de.cwiseProduct((1.0 - tape.embed.array().square()).matrix()))
                    : de;

  if (grad) {
    require(grad->size() == params_.size(), "backward_step: gradient buffer has wrong size");
    grad_view(*grad, kHeadW).noalias() += d_output * tape.h.transpose();
    grad_view(*grad, kHeadB) += d_output.rowwise().sum();
    grad_view(*grad, kWn).noalias() += dn_pre * tape.embed.transpose();
    grad_view(*grad, kBn) += dn_pre.rowwise().sum();
    grad_view(*grad, kUn).noalias() += dq * tape.h_prev.transpose();
    grad_view(*grad, kCn) += dq.rowwise().sum();
    grad_view(*grad, kWz).noalias() += dz_pre * tape.embed.transpose();
    grad_view(*grad, kUz).noalias() += dz_pre * tape.h_prev.transpose();
    grad_view(*grad, kBz) += dz_pre.rowwise().sum();
    grad_view(*grad, kWr).noalias() += dr_pre * tape.embed.transpose();
    grad_view(*grad, kUr).noalias() += dr_pre * tape.h_prev.transpose();
    grad_view(*grad, kBr) += dr_pre.rowwise().sum();
    grad_view(*grad, kEmbedW).noalias() += da * tape.input.transpose();
    grad_view(*grad, kEmbedB) += da.rowwise().sum();
  }
  if (d_input) *d_input = param(kEmbedW).transpose() * da;
  d_hidden = std::move(dh_prev);
}

VectorXd backward_through_time(const RecurrentGainNet& net, const Tape& tape,
                               const std::vector<MatrixXd>& d_outputs) {
  if (tape.size() != d_outputs.size()) {
    fail(ErrorKind::kInvalidArgument, "backward_through_time: tape has " + std::to_string(tape.size()) +
                                          " steps but " + std::to_string(d_outputs.size()) +
                                          " output adjoints were given");
  }
  VectorXd grad = VectorXd::Zero(net.parameter_count());
  MatrixXd d_hidden;
  for (std::size_t k = tape.size(); k-- > 0;) {
    net.backward_step(tape[k], d_outputs[k], d_hidden, nullptr, &grad);
  }
  return grad;
}

MatrixXd reshape_output(const MatrixXd& outputs, Index column, int rows, int cols) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(outputs.col(column).data(), rows, cols);
}

VectorXd flatten_row_major(const MatrixXd& m) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor rm = m;
  return Eigen::Map<const VectorXd>(rm.data(), rm.size());
}

double clip_gradient(VectorXd& g, double threshold) {
  const double norm = g.norm();
  if (threshold > 0.0 && norm > threshold) g *= threshold / norm;
  return norm;
}

Adam::Adam(Index size, AdamConfig config)
    : config_(config), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {}

void Adam::step(VectorXd& params, VectorXd grads, const std::vector<ParamSegment>& segments) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "Adam: parameter/gradient size mismatch");
  if (!grads.allFinite()) {
    std::string name = "<unnamed>";
    for (Index i = 0; i < grads.size(); ++i) {
      if (std::isfinite(grads(i))) continue;
      for (const auto& s : segments) {
        if (i >= s.offset && i < s.offset + s.rows * s.cols) name = s.name;
      }
      break;
    }
    fail(ErrorKind::kTraining, "non-finite gradient in parameter '" + name + "'");
  }
  clip_gradient(grads, config_.clip_norm);
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grads;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
}

nlohmann::json shape_to_json(const NetShape& s) {
  return {{"input_dim", s.input_dim},
          {"embed_dim", s.embed_dim},
          {"hidden_dim", s.hidden_dim},
          {"output_rows", s.output_rows},
          {"output_cols", s.output_cols},
          {"embed_activation", s.embed_activation == Activation::kTanh ? "tanh" : "identity"}};
}

NetShape shape_from_json(const nlohmann::json& j) {
  NetShape s;
  s.input_dim = j.at("input_dim").get<int>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.hidden_dim = j.at("hidden_dim").get<int>();
  s.output_rows = j.at("output_rows").get<int>();
  s.output_cols = j.at("output_cols").get<int>();
  s.embed_activation = j.at("embed_activation").get<std::string>() == "tanh" ? Activation::kTanh
                                                                               : Activation::kIdentity;
  return s;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header = ckpt.header;
  header["format"] = "splitkf.checkpoint";
  header["version"] = kCheckpointFormatVersion;
  header["payload_count"] = ckpt.payload.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kInvalidArgument, "cannot open '" + path.string() + "' for writing");
  out << header.dump() << '\n';
  static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian");
  out.write(reinterpret_cast<const char*>(ckpt.payload.data()),
            static_cast<std::streamsize>(ckpt.payload.size() * sizeof(double)));
  if (!out) fail(ErrorKind::kFormat, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kResolution, "cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.empty()) fail(ErrorKind::kFormat, "checkpoint file is empty");
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(line, nullptr, false);
  if (ckpt.header.is_discarded() || ckpt.header.value("format", "") != "splitkf.checkpoint") {
    fail(ErrorKind::kFormat, "not a splitkf checkpoint");
  }
  if (ckpt.header.value("version", -1) != kCheckpointFormatVersion) {
    fail(ErrorKind::kVersion, "unsupported checkpoint version " + ckpt.header["version"].dump());
  }
  const auto count = ckpt.header.at("payload_count").get<Index>();
  ckpt.payload.resize(count);
  in.read(reinterpret_cast<char*>(ckpt.payload.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    fail(ErrorKind::kFormat, "checkpoint payload truncated");
  }
  return ckpt;
}

}  // namespace splitkf::nn

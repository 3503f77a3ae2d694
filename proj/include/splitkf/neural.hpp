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

// Recurrent gain network: tanh embedding -> GRU cell -> linear head. Forward
// and reverse passes are written out by hand; a step tape records what the
// reverse pass needs. All parameters live in one flat vector so optimizers
// and checkpoints see a single buffer.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace splitkf::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { kIdentity, kTanh };

struct NetShape {
  int input_dim{1};
  int embed_dim{64};
  int hidden_dim{64};
  int output_rows{1};
  int output_cols{1};
  Activation embed_activation{Activation::kTanh};

  int output_size() const { return output_rows * output_cols; }
  bool operator==(const NetShape&) const = default;
};

struct ParamSegment {
  std::string name;
  Index offset;
  Index rows;
  Index cols;
};

class RecurrentGainNet {
 public:
  struct StepTape {
    MatrixXd input;
    MatrixXd embed;
    MatrixXd h_prev;
    MatrixXd reset;
    MatrixXd update;
    MatrixXd candidate;
    MatrixXd recurrent_candidate;  // U_n h_prev + c_n
    MatrixXd h;
  };

  explicit RecurrentGainNet(const NetShape& shape);

  const NetShape& shape() const { return shape_; }
  Index parameter_count() const { return params_.size(); }
  VectorXd& parameters() { return params_; }
  const VectorXd& parameters() const { return params_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor.
  void init_uniform(std::uint64_t seed, std::uint32_t stream_index = 0);

  /// Scales the output weights and overwrites the output bias, so the
  /// initial output stays close to `bias` (row-major matrix).
  void set_head(double weight_scale, const VectorXd& bias);

  /// Zero hidden state for `batch` independent sequences.
  void reset(Index batch = 1);
  const MatrixXd& hidden() const { return hidden_; }

  /// inputs: input_dim x B. Returns output_size x B; column b reshapes
  /// row-major to output_rows x output_cols.
  MatrixXd forward(const MatrixXd& inputs, StepTape* tape = nullptr);
  MatrixXd forward_step(const VectorXd& features);

  /// Reverse of one forward step. On entry d_hidden holds the adjoint of
  /// tape.h contributed by later steps; on exit it holds the adjoint of
  /// tape.h_prev. Parameter gradients are accumulated into `grad` when given.
  void backward_step(const StepTape& tape, const MatrixXd& d_output, MatrixXd& d_hidden,
                     MatrixXd* d_input, VectorXd* grad) const;

 private:
  using Map = Eigen::Map<MatrixXd>;
  using ConstMap = Eigen::Map<const MatrixXd>;
  ConstMap param(int k) const;
  Map grad_view(VectorXd& grad, int k) const;

  NetShape shape_;
  VectorXd params_;
  std::vector<ParamSegment> segments_;
  MatrixXd hidden_;
};

using Tape = std::vector<RecurrentGainNet::StepTape>;

/// Parameter gradient of sum_t <d_outputs[t], output_t> over a recorded
/// unrolled sequence (inputs treated as constants).
VectorXd backward_through_time(const RecurrentGainNet& net, const Tape& tape,
                               const std::vector<MatrixXd>& d_outputs);

/// Reshape of one output column into the row-major output matrix.
MatrixXd reshape_output(const MatrixXd& outputs, Index column, int rows, int cols);
/// Inverse of reshape_output.
VectorXd flatten_row_major(const MatrixXd& m);

struct AdamConfig {
  double learning_rate{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
  double clip_norm{1.0};
};

/// Scales g so that its Euclidean norm is at most `threshold`.
double clip_gradient(VectorXd& g, double threshold);

class Adam {
 public:
  Adam(Index size, AdamConfig config = {});

  /// Clips, checks finiteness (naming the offending segment), then applies
  /// one bias-corrected adaptive-moment update.
  void step(VectorXd& params, VectorXd grads, const std::vector<ParamSegment>& segments = {});

  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }
  const VectorXd& first_moment() const { return m_; }
  const VectorXd& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  VectorXd m_;
  VectorXd v_;
  long t_{0};
};

nlohmann::json shape_to_json(const NetShape& s);
NetShape shape_from_json(const nlohmann::json& j);

// Checkpoint file: one JSON header line, then `payload_count` little-endian
// IEEE-754 doubles.
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  VectorXd payload;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace splitkf::nn

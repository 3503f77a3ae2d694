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

#include "doctest.h"
#include "oracles.hpp"
#include "splitkf/error.hpp"
#include "splitkf/neural.hpp"

using namespace splitkf;
using namespace splitkf::nn;

namespace {

NetShape small_shape() { return {4, 5, 6, 2, 3, Activation::kTanh}; }

MatrixXd seg(const RecurrentGainNet& net, const std::string& name) {
  for (const ParamSegment& s : net.segments()) {
    if (s.name == name) return Eigen::Map<const MatrixXd>(net.parameters().data() + s.offset, s.rows, s.cols);
  }
  FAIL("no segment " << name);
  return {};
}

// GRU step written from the textbook equations on top of the named tensors.
VectorXd reference_step(const RecurrentGainNet& net, const VectorXd& x, VectorXd& h) {
  auto sig = [](const VectorXd& v) { return VectorXd((1.0 + (-v.array()).exp()).inverse()); };
  const VectorXd e = (seg(net, "embed.W") * x + seg(net, "embed.b")).array().tanh();
  const VectorXd r = sig(seg(net, "gru.W_r") * e + seg(net, "gru.U_r") * h + seg(net, "gru.b_r"));
  const VectorXd z = sig(seg(net, "gru.W_z") * e + seg(net, "gru.U_z") * h + seg(net, "gru.b_z"));
  const VectorXd n = (seg(net, "gru.W_n") * e + seg(net, "gru.b_n") +
                      r.cwiseProduct(seg(net, "gru.U_n") * h + seg(net, "gru.c_n")))
                         .array()
                         .tanh();
  h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
  return seg(net, "head.W") * h + seg(net, "head.b");
}

// Sum over steps of <weights_t, output_t> for a freshly reset net.
double unrolled_objective(RecurrentGainNet& net, const std::vector<MatrixXd>& xs, const std::vector<MatrixXd>& ws,
                          Tape* tape = nullptr) {
  net.reset(xs[0].cols());
  double total = 0;
  if (tape) tape->assign(xs.size(), {});
  for (std::size_t t = 0; t < xs.size(); ++t) {
    total += (ws[t].array() * net.forward(xs[t], tape ? &(*tape)[t] : nullptr).array()).sum();
  }
  return total;
}

}  // namespace

TEST_CASE("forward matches the reference GRU equations") {
  RecurrentGainNet net(small_shape());
  net.init_uniform(3);
  RandomStream rng(1, 1);
  VectorXd h = VectorXd::Zero(6);
  net.reset(1);
  for (int t = 0; t < 5; ++t) {
    const VectorXd x = oracle::random_matrix(rng, 4, 1);
    const VectorXd ref = reference_step(net, x, h);
    const VectorXd out = flatten_row_major(net.forward_step(x));
    CHECK((out - ref).norm() < 1e-13);
    CHECK((net.hidden().col(0) - h).norm() < 1e-13);
  }
}

TEST_CASE("batched forward equals independent sequences") {
  RecurrentGainNet net(small_shape());
  net.init_uniform(5);
  RandomStream rng(2, 2);
  std::vector<MatrixXd> xs;
  for (int t = 0; t < 4; ++t) xs.push_back(oracle::random_matrix(rng, 4, 3));
  net.reset(3);
  std::vector<MatrixXd> batched;
  for (const auto& x : xs) batched.push_back(net.forward(x));
  for (int b = 0; b < 3; ++b) {
    net.reset(1);
    for (int t = 0; t < 4; ++t) CHECK((net.forward(xs[t].col(b)) - batched[t].col(b)).norm() < 1e-14);
  }
}

TEST_CASE("backpropagation through time matches finite differences") {
  for (Activation act : {Activation::kTanh, Activation::kIdentity}) {
    NetShape shape = small_shape();
    shape.embed_activation = act;
    RecurrentGainNet net(shape);
    net.init_uniform(7);
    RandomStream rng(3, 3);
    std::vector<MatrixXd> xs, ws;
    for (int t = 0; t < 6; ++t) {
      xs.push_back(oracle::random_matrix(rng, 4, 2));
      ws.push_back(oracle::random_matrix(rng, 6, 2));
    }
    Tape tape;
    unrolled_objective(net, xs, ws, &tape);
    const VectorXd grad = backward_through_time(net, tape, ws);
    const VectorXd theta = net.parameters();
    const VectorXd fd = oracle::central_gradient(
        [&](const VectorXd& p) {
          net.parameters() = p;
          return unrolled_objective(net, xs, ws);
        },
        theta, 1e-6);
    net.parameters() = theta;
    CHECK(oracle::relative_error(grad, fd) < 1e-5);
  }
}

TEST_CASE("input adjoint of a step matches finite differences") {
  RecurrentGainNet net(small_shape());
  net.init_uniform(9);
  RandomStream rng(4, 4);
  const VectorXd warm = oracle::random_matrix(rng, 4, 1);
  const VectorXd x = oracle::random_matrix(rng, 4, 1);
  const MatrixXd w = oracle::random_matrix(rng, 6, 1);
  // One warm-up step so the hidden state entering the checked step is not zero.
  auto objective = [&](const VectorXd& in, RecurrentGainNet::StepTape* tape) {
    net.reset(1);
    net.forward_step(warm);
    return (w.array() * net.forward(in, tape).array()).sum();
  };
  RecurrentGainNet::StepTape tape;
  objective(x, &tape);
  MatrixXd dh = MatrixXd::Zero(6, 1), dx;
  net.backward_step(tape, w, dh, &dx, nullptr);
  const VectorXd fd = oracle::central_gradient([&](const VectorXd& in) { return objective(in, nullptr); }, x, 1e-6);
  CHECK(oracle::relative_error(dx, fd) < 1e-7);
  CHECK(dh.norm() > 0.0);
}

TEST_CASE("set_head pins the initial output") {
  RecurrentGainNet net(small_shape());
  net.init_uniform(1);
  VectorXd bias(6);
  bias << 1, 2, 3, 4, 5, 6;
  net.set_head(0.0, bias);
  net.reset(1);
  CHECK(flatten_row_major(net.forward_step(VectorXd::Ones(4))) == bias);
  CHECK_THROWS_AS(net.set_head(1.0, VectorXd::Ones(5)), Error);
}

TEST_CASE("row-major reshape round trip") {
  MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const VectorXd v = flatten_row_major(m);
  CHECK(v(1) == 2);
  CHECK(v(3) == 4);
  CHECK(reshape_output(MatrixXd(v), 0, 2, 3) == m);
}

TEST_CASE("gradient clipping") {
  VectorXd g(2);
  g << 3, 4;
  CHECK(clip_gradient(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.norm() == doctest::Approx(1.0));
  VectorXd small(2);
  small << 0.1, 0.1;
  const VectorXd copy = small;
  clip_gradient(small, 1.0);
  CHECK(small == copy);
}

TEST_CASE("Adam matches the bias-corrected update") {
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.clip_norm = 1e9;
  Adam adam(3, cfg);
  VectorXd p = VectorXd::Zero(3), m = p, v = p;
  VectorXd ref = p;
  RandomStream rng(6, 6);
  for (int t = 1; t <= 5; ++t) {
    const VectorXd g = oracle::random_matrix(rng, 3, 1);
    adam.step(p, g);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const VectorXd mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref.array() -= 0.01 * mh.array() / (vh.array().sqrt() + 1e-8);
    CHECK((p - ref).norm() < 1e-15);
  }
  CHECK(adam.steps() == 5);
}

TEST_CASE("Adam names the parameter with a non-finite gradient") {
  RecurrentGainNet net(small_shape());
  Adam adam(net.parameter_count());
  VectorXd g = VectorXd::Zero(net.parameter_count());
  g(net.segments()[3].offset) = std::nan("");
  try {
    adam.step(net.parameters(), g, net.segments());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTraining);
    CHECK(std::string(e.what()).find(net.segments()[3].name) != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  RecurrentGainNet net(small_shape());
  net.init_uniform(2);
  const auto path = std::filesystem::temp_directory_path() / "splitkf_test_net.ckpt";
  save_checkpoint({{{"shape", shape_to_json(net.shape())}}, net.parameters()}, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.payload == net.parameters());
  CHECK(shape_from_json(back.header.at("shape")) == net.shape());
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(path, std::ios::binary) << all.substr(0, all.size() - 5);
  }
  try {
    load_checkpoint(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
  std::filesystem::remove(path);
  try {
    load_checkpoint(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kResolution);
  }
}

TEST_CASE("parameter init is seeded and bounded") {
  RecurrentGainNet a(small_shape()), b(small_shape()), c(small_shape());
  a.init_uniform(4);
  b.init_uniform(4);
  c.init_uniform(4, 1);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  CHECK(a.parameters().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0));
}

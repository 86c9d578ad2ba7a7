// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "attrdialog/gradcheck.hpp"
#include "attrdialog/layers.hpp"
#include "fixtures.hpp"

using namespace attrdialog;
using attrdialog::testing::project;
using attrdialog::testing::random_tensor;
using attrdialog::testing::scramble;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Row-vector GRU with explicit loops: out = x·W + h·U + b per gate.
std::vector<double> reference_gru(const nn::GruLayer& l, const std::vector<double>& x,
                                  const std::vector<double>& h) {
  const std::size_t in = l.input_dim, hid = l.hidden_dim;
  auto affine = [&](const Tensor& w, const Tensor& u, const Tensor& b,
                    const std::vector<double>& hv, std::size_t j) {
    double s = b.values()[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w.at(i, j);
    for (std::size_t i = 0; i < hid; ++i) s += hv[i] * u.at(i, j);
    return s;
  };
  std::vector<double> r(hid), z(hid), rh(hid), out(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    r[j] = sigmoid(affine(*l.w_reset, *l.u_reset, *l.b_reset, h, j));
    z[j] = sigmoid(affine(*l.w_update, *l.u_update, *l.b_update, h, j));
  }
  for (std::size_t j = 0; j < hid; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < hid; ++j) {
    const double cand = std::tanh(affine(*l.w_candidate, *l.u_candidate, *l.b_candidate, rh, j));
    out[j] = (1 - z[j]) * cand + z[j] * h[j];
  }
  return out;
}

}  // namespace

TEST(Gru, StepMatchesLoopReference) {
  ParameterSet params;
  nn::GruLayer layer = nn::make_gru_layer(params, "g", 3, 4);
  Rng rng(1);
  scramble(params, rng, 0.8);
  Tensor x = random_tensor({1, 3}, rng);
  Tensor h = random_tensor({1, 4}, rng);
  ad::Graph g;
  ad::Expr out = nn::gru_step(g, layer, g.constant(x), g.constant(h));
  auto ref = reference_gru(layer, {x.values().begin(), x.values().end()},
                           {h.values().begin(), h.values().end()});
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.value()[j], ref[j], 1e-14);
}

TEST(Gru, ZeroParametersKeepZeroState) {
  ParameterSet params;
  nn::GruStack stack = nn::make_gru_stack(params, "s", 2, 3, 2, 0.0);
  Rng rng(2);
  ad::Graph g;
  std::vector<ad::Expr> xs = {g.constant(random_tensor({1, 2}, rng)),
                              g.constant(random_tensor({1, 2}, rng))};
  nn::GruRun run = nn::gru_sequence(g, stack, xs, {}, false, nullptr);
  for (const auto& f : run.finals) {
    for (double v : f.value().values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Gru, InitializationBounds) {
  ParameterSet params;
  nn::GruStack stack = nn::make_gru_stack(params, "s", 6, 9, 1, 0.0);
  Rng rng(3);
  nn::init_gru(stack, rng);
  const double a = std::sqrt(1.0 / 9.0);
  for (Tensor* t : stack.layers[0].tensors()) {
    for (double v : t->values()) EXPECT_LE(std::abs(v), a);
  }
  for (double v : stack.layers[0].b_update->values()) EXPECT_EQ(v, 0.0);
  nn::Dense d = nn::make_dense(params, "d", 6, 10);
  nn::init_dense(d, rng);
  for (double v : d.weight->values()) EXPECT_LE(std::abs(v), std::sqrt(6.0 / 16.0));
}

TEST(Gru, SequenceRunsOneStepPerInput) {
  ParameterSet params;
  nn::GruStack stack = nn::make_gru_stack(params, "s", 2, 3, 2, 0.0);
  Rng rng(4);
  nn::init_gru(stack, rng);
  ad::Graph g;
  std::vector<ad::Expr> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(g.constant(random_tensor({1, 2}, rng)));
  nn::GruRun run = nn::gru_sequence(g, stack, xs, {}, false, nullptr);
  EXPECT_EQ(run.outputs.size(), 5u);
  EXPECT_EQ(run.finals.size(), 2u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(run.outputs.back().value()[i], run.finals.back().value()[i]);
  }
}

TEST(Gru, InterLayerDropoutOnlyWhenTraining) {
  ParameterSet params;
  nn::GruStack stack = nn::make_gru_stack(params, "s", 2, 3, 2, 0.5);
  Rng rng(5);
  nn::init_gru(stack, rng);
  auto run = [&](bool training, std::uint64_t seed) {
    ad::Graph g;
    Rng local(seed);
    std::vector<ad::Expr> xs = {g.constant(Tensor::matrix(1, 2, {0.3, -0.4})),
                                g.constant(Tensor::matrix(1, 2, {0.9, 0.1}))};
    auto r = nn::gru_sequence(g, stack, xs, {}, training, &local);
    return std::vector<double>(r.finals.back().value().values().begin(),
                               r.finals.back().value().values().end());
  };
  EXPECT_EQ(run(false, 1), run(false, 2));
  bool differs = false;
  for (std::uint64_t s = 1; s < 20 && !differs; ++s) differs = run(true, s) != run(false, 1);
  EXPECT_TRUE(differs);
}

TEST(GradientSuite, GruStep) {
  ParameterSet params;
  nn::GruLayer layer = nn::make_gru_layer(params, "g", 3, 4);
  Rng rng(6);
  scramble(params, rng, 0.8);
  Tensor x = random_tensor({1, 3}, rng);
  Tensor h = random_tensor({1, 4}, rng);
  std::vector<NamedTensor> checked = {{"x", &x}, {"h", &h}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    checked.push_back({params.name(i), &params.tensor(i)});
  }
  auto report = check_gradients([&](ad::Graph& g) {
    return project(g, nn::gru_step(g, layer, g.parameter(x), g.parameter(h)));
  }, checked);
  EXPECT_TRUE(report.passed(1e-4)) << report.summary();
}

TEST(GradientSuite, GruStackSequence) {
  ParameterSet params;
  nn::GruStack stack = nn::make_gru_stack(params, "s", 2, 3, 2, 0.0);
  Rng rng(7);
  scramble(params, rng, 0.8);
  Tensor x0 = random_tensor({1, 2}, rng), x1 = random_tensor({1, 2}, rng);
  auto report = check_gradients([&](ad::Graph& g) {
    std::vector<ad::Expr> xs = {g.constant(x0), g.constant(x1), g.constant(x0)};
    return project(g, nn::gru_sequence(g, stack, xs, {}, false, nullptr).finals.back());
  }, params);
  EXPECT_TRUE(report.passed(1e-4)) << report.summary();
}

TEST(GradientSuite, Mlp) {
  ParameterSet params;
  const std::size_t dims[] = {4, 6, 3};
  nn::Mlp mlp = nn::make_mlp(params, "m", dims);
  Rng rng(8);
  nn::init_mlp(mlp, rng);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double& v : params.tensor(i).values()) v += 0.05;  // nonzero biases
  }
  Tensor x = random_tensor({2, 4}, rng);
  auto report = check_gradients([&](ad::Graph& g) {
    return project(g, nn::mlp_forward(g, mlp, g.constant(x)));
  }, params);
  EXPECT_TRUE(report.passed(1e-4)) << report.summary();
}

// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/layers.hpp"

#include <cmath>

#include "attrdialog/error.hpp"

namespace attrdialog::nn {

std::vector<Tensor*> GruLayer::tensors() const {
  return {w_reset, u_reset, b_reset, w_update, u_update, b_update,
          w_candidate, u_candidate, b_candidate};
}

GruLayer make_gru_layer(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden_dim) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw ArgumentError(prefix + ": GRU dimensions must be positive");
  }
  GruLayer layer;
  layer.input_dim = input_dim;
  layer.hidden_dim = hidden_dim;
  layer.w_reset = &params.add(prefix + ".w_reset", {input_dim, hidden_dim});
  layer.u_reset = &params.add(prefix + ".u_reset", {hidden_dim, hidden_dim});
  layer.b_reset = &params.add(prefix + ".b_reset", {1, hidden_dim});
  layer.w_update = &params.add(prefix + ".w_update", {input_dim, hidden_dim});
  layer.u_update = &params.add(prefix + ".u_update", {hidden_dim, hidden_dim});
  layer.b_update = &params.add(prefix + ".b_update", {1, hidden_dim});
  layer.w_candidate = &params.add(prefix + ".w_candidate", {input_dim, hidden_dim});
  layer.u_candidate = &params.add(prefix + ".u_candidate", {hidden_dim, hidden_dim});
  layer.b_candidate = &params.add(prefix + ".b_candidate", {1, hidden_dim});
  return layer;
}

GruStack make_gru_stack(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden_dim,
                        std::size_t depth, double dropout) {
  if (depth == 0) throw ArgumentError(prefix + ": GRU stack needs at least one layer");
  GruStack stack;
  stack.dropout = dropout;
  for (std::size_t l = 0; l < depth; ++l) {
    stack.layers.push_back(make_gru_layer(params, prefix + ".l" + std::to_string(l),
                                          l == 0 ? input_dim : hidden_dim, hidden_dim));
  }
  return stack;
}

Dense make_dense(ParameterSet& params, const std::string& prefix,
                 std::size_t input_dim, std::size_t output_dim) {
  if (input_dim == 0 || output_dim == 0) {
    throw ArgumentError(prefix + ": dense dimensions must be positive");
  }
  Dense layer;
  layer.input_dim = input_dim;
  layer.output_dim = output_dim;
  layer.weight = &params.add(prefix + ".weight", {input_dim, output_dim});
  layer.bias = &params.add(prefix + ".bias", {1, output_dim});
  return layer;
}

Mlp make_mlp(ParameterSet& params, const std::string& prefix,
             std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw ArgumentError(prefix + ": MLP needs input and output dims");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    mlp.layers.push_back(
        make_dense(params, prefix + ".d" + std::to_string(i), dims[i], dims[i + 1]));
  }
  return mlp;
}

void init_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
}

void init_gru(const GruStack& stack, Rng& rng) {
  for (const GruLayer& layer : stack.layers) {
    const double bound = std::sqrt(1.0 / static_cast<double>(layer.hidden_dim));
    for (Tensor* t : {layer.w_reset, layer.u_reset, layer.w_update, layer.u_update,
                      layer.w_candidate, layer.u_candidate}) {
      init_uniform(*t, bound, rng);
    }
    for (Tensor* t : {layer.b_reset, layer.b_update, layer.b_candidate}) t->fill(0.0);
  }
}

void init_dense(const Dense& layer, Rng& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(layer.input_dim + layer.output_dim));
  init_uniform(*layer.weight, bound, rng);
  layer.bias->fill(0.0);
}

void init_mlp(const Mlp& mlp, Rng& rng) {
  for (const Dense& layer : mlp.layers) init_dense(layer, rng);
}

namespace {

void require_row(ad::Expr e, std::size_t dim, const char* what) {
  const Shape& s = e.shape();
  if (s.size() != 2 || s[0] != 1 || s[1] != dim) {
    throw ShapeError(std::string(what) + ": expected [1x" + std::to_string(dim) +
                     "], got " + shape_string(s));
  }
}

}  // namespace

ad::Expr gru_step(ad::Graph& g, const GruLayer& layer, ad::Expr x, ad::Expr h) {
  require_row(x, layer.input_dim, "gru_step input");
  require_row(h, layer.hidden_dim, "gru_step hidden");
  auto gate = [&](Tensor* w, Tensor* u, Tensor* b, ad::Expr hidden) {
    return ad::add_bias(ad::add(ad::matmul(x, g.parameter(*w)),
                                ad::matmul(hidden, g.parameter(*u))),
                        g.parameter(*b));
  };
  ad::Expr reset = ad::sigmoid(gate(layer.w_reset, layer.u_reset, layer.b_reset, h));
  ad::Expr update = ad::sigmoid(gate(layer.w_update, layer.u_update, layer.b_update, h));
  ad::Expr candidate = ad::tanh(
      gate(layer.w_candidate, layer.u_candidate, layer.b_candidate, ad::mul(reset, h)));
  // (1-z)⊙h̃ + z⊙h  ==  h̃ + z⊙(h - h̃)
  return ad::add(candidate, ad::mul(update, ad::sub(h, candidate)));
}

GruRun gru_sequence(ad::Graph& g, const GruStack& stack,
                    std::span<const ad::Expr> xs, std::span<const ad::Expr> h0,
                    bool training, Rng* rng) {
  if (!h0.empty() && h0.size() != stack.depth()) {
    throw ShapeError("gru_sequence: " + std::to_string(h0.size()) +
                     " initial hiddens for " + std::to_string(stack.depth()) +
                     " layers");
  }
  const bool use_dropout = training && stack.dropout > 0.0 && stack.depth() > 1;
  if (use_dropout && rng == nullptr) {
    throw ArgumentError("gru_sequence: dropout during training requires an rng");
  }
  GruRun run;
  std::vector<ad::Expr> inputs(xs.begin(), xs.end());
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    const GruLayer& layer = stack.layers[l];
    ad::Expr h = h0.empty() ? zeros(g, layer.hidden_dim) : h0[l];
    require_row(h, layer.hidden_dim, "gru_sequence initial hidden");
    std::vector<ad::Expr> outputs;
    outputs.reserve(inputs.size());
    for (ad::Expr x : inputs) {
      if (l > 0 && use_dropout) x = ad::dropout(x, stack.dropout, true, *rng);
      h = gru_step(g, layer, x, h);
      outputs.push_back(h);
    }
    run.finals.push_back(h);
    inputs = std::move(outputs);
  }
  run.outputs = std::move(inputs);
  return run;
}

ad::Expr dense_forward(ad::Graph& g, const Dense& layer, ad::Expr x) {
  if (x.shape().size() != 2 || x.shape()[1] != layer.input_dim) {
    throw ShapeError("dense: expected input width " + std::to_string(layer.input_dim) +
                     ", got " + shape_string(x.shape()));
  }
  return ad::add_bias(ad::matmul(x, g.parameter(*layer.weight)),
                      g.parameter(*layer.bias));
}

ad::Expr mlp_forward(ad::Graph& g, const Mlp& mlp, ad::Expr x) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    x = dense_forward(g, mlp.layers[i], x);
    if (i + 1 < mlp.layers.size()) x = ad::relu(x);
  }
  return x;
}

ad::Expr zeros(ad::Graph& g, std::size_t dim) { return g.constant(Tensor({1, dim})); }

}  // namespace attrdialog::nn

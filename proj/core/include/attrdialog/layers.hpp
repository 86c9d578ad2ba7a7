// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attrdialog/graph.hpp"
#include "attrdialog/parameters.hpp"
#include "attrdialog/rng.hpp"

namespace attrdialog::nn {

/// Weights of one GRU layer. Inputs and hiddens are row vectors, so the
/// input blocks are [input×hidden], the recurrent blocks [hidden×hidden] and
/// the biases [1×hidden].
struct GruLayer {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor* w_reset = nullptr;
  Tensor* u_reset = nullptr;
  Tensor* b_reset = nullptr;
  Tensor* w_update = nullptr;
  Tensor* u_update = nullptr;
  Tensor* b_update = nullptr;
  Tensor* w_candidate = nullptr;
  Tensor* u_candidate = nullptr;
  Tensor* b_candidate = nullptr;

  std::vector<Tensor*> tensors() const;
};

struct GruStack {
  std::vector<GruLayer> layers;
  /// Activation dropout applied to each layer's outputs before the next
  /// layer consumes them (training only).
  double dropout = 0.0;

  std::size_t input_dim() const { return layers.front().input_dim; }
  std::size_t hidden_dim() const { return layers.back().hidden_dim; }
  std::size_t depth() const { return layers.size(); }
};

struct Dense {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Tensor* weight = nullptr;  ///< [input×output]
  Tensor* bias = nullptr;    ///< [1×output]
};

/// Affine layers with ReLU between them and a linear output.
struct Mlp {
  std::vector<Dense> layers;

  std::size_t input_dim() const { return layers.front().input_dim; }
  std::size_t output_dim() const { return layers.back().output_dim; }
};

GruLayer make_gru_layer(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden_dim);
GruStack make_gru_stack(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden_dim,
                        std::size_t depth, double dropout);
Dense make_dense(ParameterSet& params, const std::string& prefix,
                 std::size_t input_dim, std::size_t output_dim);
/// `dims` = {input, hidden..., output}; at least two entries.
Mlp make_mlp(ParameterSet& params, const std::string& prefix,
             std::span<const std::size_t> dims);

void init_uniform(Tensor& t, double bound, Rng& rng);
/// Recurrent blocks uniform(-a, a) with a = sqrt(1/hidden); biases zero.
void init_gru(const GruStack& stack, Rng& rng);
/// Weights uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)); biases zero.
void init_dense(const Dense& layer, Rng& rng);
void init_mlp(const Mlp& mlp, Rng& rng);

/// r = σ(x Wr + h Ur + br); z = σ(x Wz + h Uz + bz);
/// h̃ = tanh(x Wh + (r⊙h) Uh + bh); h' = (1-z)⊙h̃ + z⊙h.
ad::Expr gru_step(ad::Graph& g, const GruLayer& layer, ad::Expr x, ad::Expr h);

struct GruRun {
  std::vector<ad::Expr> outputs;  ///< top-layer hidden after each step
  std::vector<ad::Expr> finals;   ///< final hidden per layer
};

/// Runs the stack over `xs`. `h0` holds one initial hidden per layer; an
/// empty span means zero vectors. `rng` is required only when training with
/// a nonzero dropout rate.
GruRun gru_sequence(ad::Graph& g, const GruStack& stack,
                    std::span<const ad::Expr> xs, std::span<const ad::Expr> h0,
                    bool training, Rng* rng);

ad::Expr dense_forward(ad::Graph& g, const Dense& layer, ad::Expr x);
ad::Expr mlp_forward(ad::Graph& g, const Mlp& mlp, ad::Expr x);

/// 1×dim zero row, as a constant.
ad::Expr zeros(ad::Graph& g, std::size_t dim);

}  // namespace attrdialog::nn

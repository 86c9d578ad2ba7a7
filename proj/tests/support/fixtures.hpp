// SPDX-License-Identifier: Apache-2.0
// Shared builders for unit and acceptance tests.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attrdialog/corpus.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/graph.hpp"
#include "attrdialog/rng.hpp"
#include "attrdialog/tensor.hpp"

namespace attrdialog::testing {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0);

/// Schema with one family "act" of `labels` known labels l0, l1, ...
AttributeSchema single_family_schema(std::size_t labels, const std::string& name = "act");

/// Small model for gradient and property tests; dropout off.
ModelConfig tiny_config(std::size_t vocab_size, AttributeSchema schema, std::uint64_t seed = 7);

/// Random dialogs with EOS-terminated utterances over ids [4, vocab).
std::vector<Dialog> random_dialogs(std::size_t count, std::size_t min_len, std::size_t max_len,
                                   std::size_t vocab_size, const AttributeSchema& schema,
                                   Rng& rng, std::size_t max_tokens = 5);

/// Uniform(-scale, scale) over every parameter entry.
void scramble(ParameterSet& params, Rng& rng, double scale = 0.5);

/// Scalar projection Σ x ⊙ W with a fixed random W, for checking ops whose
/// output is not a scalar.
ad::Expr project(ad::Graph& g, ad::Expr x, std::uint64_t seed = 99);

/// Every parameter entry in registration order.
std::vector<double> flat_values(const ParameterSet& params);

/// Vocabulary with the reserved tokens plus w0..w{n-1}.
Vocabulary numbered_vocab(std::size_t ordinary);

}  // namespace attrdialog::testing

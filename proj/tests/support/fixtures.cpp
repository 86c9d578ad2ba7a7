// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <random>

namespace attrdialog::testing {

Tensor random_tensor(Shape shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : t.values()) v = u(rng);
  return t;
}

AttributeSchema single_family_schema(std::size_t labels, const std::string& name) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < labels; ++i) names.push_back("l" + std::to_string(i));
  return AttributeSchema({AttributeFamily::make(name, names)});
}

ModelConfig tiny_config(std::size_t vocab_size, AttributeSchema schema, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 4;
  c.encoder_hidden = 5;
  c.context_hidden = 4;
  c.decoder_hidden = 5;
  c.encoder_layers = 2;
  c.context_layers = 1;
  c.decoder_layers = 2;
  c.attribute_hidden = 3;
  c.head_hidden = 4;
  c.attribute_dims.assign(schema.size(), 3);
  c.dropout = 0.0;
  c.context_window = 2;
  c.init_seed = seed;
  c.schema = std::move(schema);
  return c;
}

std::vector<Dialog> random_dialogs(std::size_t count, std::size_t min_len, std::size_t max_len,
                                   std::size_t vocab_size, const AttributeSchema& schema,
                                   Rng& rng, std::size_t max_tokens) {
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::uniform_int_distribution<std::size_t> tokens(1, max_tokens);
  std::uniform_int_distribution<int> word(4, static_cast<int>(vocab_size) - 1);
  std::vector<Dialog> out;
  for (std::size_t d = 0; d < count; ++d) {
    Dialog dialog;
    const std::size_t n = length(rng);
    for (std::size_t t = 0; t < n; ++t) {
      Utterance u;
      const std::size_t len = tokens(rng);
      for (std::size_t i = 0; i < len; ++i) u.tokens.push_back(word(rng));
      u.tokens.push_back(Vocabulary::kEos);
      for (std::size_t k = 0; k < schema.size(); ++k) {
        std::uniform_int_distribution<int> label(0, schema.family(k).unknown());
        u.attributes.push_back(label(rng));
      }
      dialog.utterances.push_back(std::move(u));
    }
    out.push_back(std::move(dialog));
  }
  return out;
}

void scramble(ParameterSet& params, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double& v : params.tensor(i).values()) v = u(rng);
  }
}

ad::Expr project(ad::Graph& g, ad::Expr x, std::uint64_t seed) {
  Rng rng(seed);
  ad::Expr w = g.constant(random_tensor(x.shape(), rng));
  return ad::sum(ad::mul(x, w));
}

Vocabulary numbered_vocab(std::size_t ordinary) {
  Vocabulary v;
  for (std::size_t i = 0; i < ordinary; ++i) v.add("w" + std::to_string(i));
  return v;
}

std::vector<double> flat_values(const ParameterSet& params) {
  std::vector<double> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params.tensor(i).values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace attrdialog::testing

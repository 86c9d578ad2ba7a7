// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/dialog_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "attrdialog/error.hpp"

namespace attrdialog {

namespace {

constexpr std::size_t kDefaultAttributeDim = 16;

}  // namespace

std::size_t ModelConfig::attribute_dim(std::size_t family) const {
  if (attribute_dims.empty()) return kDefaultAttributeDim;
  return attribute_dims.at(family);
}

std::size_t ModelConfig::attribute_total() const {
  std::size_t total = 0;
  for (std::size_t k = 0; k < schema.size(); ++k) total += attribute_dim(k);
  return total;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ArgumentError(std::string("model config: ") + what + " must be positive");
  };
  if (vocab_size <= Vocabulary::kEos) {
    throw ArgumentError("model config: vocab_size must exceed the reserved ids");
  }
  positive(embed_dim, "embed_dim");
  positive(encoder_hidden, "encoder_hidden");
  positive(context_hidden, "context_hidden");
  positive(decoder_hidden, "decoder_hidden");
  positive(encoder_layers, "encoder_layers");
  positive(context_layers, "context_layers");
  positive(decoder_layers, "decoder_layers");
  positive(attribute_hidden, "attribute_hidden");
  positive(context_window, "context_window");
  if (!attribute_dims.empty() && attribute_dims.size() != schema.size()) {
    throw ArgumentError("model config: attribute_dims has " +
                        std::to_string(attribute_dims.size()) + " entries for " +
                        std::to_string(schema.size()) + " families");
  }
  for (std::size_t d : attribute_dims) positive(d, "attribute_dims entry");
  for (const auto& f : schema.families()) {
    if (f.known_count() == 0) {
      throw ArgumentError("model config: family " + f.name + " has no known labels");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ArgumentError("model config: dropout must lie in [0, 1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"embed_dim", embed_dim},
          {"encoder_hidden", encoder_hidden},
          {"context_hidden", context_hidden},
          {"decoder_hidden", decoder_hidden},
          {"encoder_layers", encoder_layers},
          {"context_layers", context_layers},
          {"decoder_layers", decoder_layers},
          {"attribute_hidden", attribute_hidden},
          {"head_hidden", head_hidden},
          {"attribute_dims", attribute_dims},
          {"dropout", dropout},
          {"context_window", context_window},
          {"init_seed", init_seed},
          {"zero_output_init", zero_output_init},
          {"zero_head_init", zero_head_init},
          {"schema", schema.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.context_hidden = j.value("context_hidden", c.context_hidden);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.context_layers = j.value("context_layers", c.context_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.attribute_hidden = j.value("attribute_hidden", c.attribute_hidden);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.attribute_dims = j.value("attribute_dims", c.attribute_dims);
  c.dropout = j.value("dropout", c.dropout);
  c.context_window = j.value("context_window", c.context_window);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.zero_output_init = j.value("zero_output_init", c.zero_output_init);
  c.zero_head_init = j.value("zero_head_init", c.zero_head_init);
  if (j.contains("schema")) c.schema = AttributeSchema::from_json(j["schema"]);
  return c;
}

double DecodeResult::total_nll() const {
  double total = 0.0;
  for (double v : token_nll) total += v;
  return total;
}

DialogModel::DialogModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  build();
  initialize(config_.init_seed);
}

void DialogModel::build() {
  params_ = std::make_unique<ParameterSet>();
  ParameterSet& p = *params_;
  const auto& c = config_;
  embedding_ = &p.add("embedding", {c.vocab_size, c.embed_dim});
  encoder_ = nn::make_gru_stack(p, "encoder", c.embed_dim, c.encoder_hidden,
                                c.encoder_layers, c.dropout);
  context_ = nn::make_gru_stack(p, "context", c.encoder_hidden, c.context_hidden,
                                c.context_layers, c.dropout);
  const std::size_t head_input =
      c.context_hidden + (c.schema.empty() ? 0 : c.attribute_hidden);
  for (std::size_t k = 0; k < c.schema.size(); ++k) {
    const auto& f = c.schema.family(k);
    attribute_embeddings_.push_back(
        &p.add("attr_embedding." + f.name, {f.label_count(), c.attribute_dim(k)}));
  }
  if (!c.schema.empty()) {
    attribute_rnn_ = nn::make_gru_stack(p, "attr_rnn", c.attribute_total(),
                                        c.attribute_hidden, 1, 0.0);
    for (std::size_t k = 0; k < c.schema.size(); ++k) {
      const auto& f = c.schema.family(k);
      std::vector<std::size_t> dims = {head_input};
      if (c.head_hidden > 0) dims.push_back(c.head_hidden);
      dims.push_back(f.known_count());
      heads_.push_back(nn::make_mlp(p, "head." + f.name, dims));
    }
  }
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    decoder_init_.push_back(nn::make_dense(p, "decoder_init.l" + std::to_string(l),
                                           c.context_hidden, c.decoder_hidden));
  }
  decoder_ = nn::make_gru_stack(p, "decoder", c.embed_dim + c.conditioning_dim(),
                                c.decoder_hidden, c.decoder_layers, c.dropout);
  output_ = nn::make_dense(p, "output", c.decoder_hidden, c.vocab_size);
}

void DialogModel::initialize(std::uint64_t seed) {
  Rng rng(seed);
  const double embed_bound = std::sqrt(3.0 / static_cast<double>(config_.embed_dim));
  nn::init_uniform(*embedding_, embed_bound, rng);
  nn::init_gru(encoder_, rng);
  nn::init_gru(context_, rng);
  for (std::size_t k = 0; k < attribute_embeddings_.size(); ++k) {
    nn::init_uniform(*attribute_embeddings_[k],
                     std::sqrt(3.0 / static_cast<double>(config_.attribute_dim(k))), rng);
  }
  if (!config_.schema.empty()) nn::init_gru(attribute_rnn_, rng);
  for (const auto& head : heads_) {
    nn::init_mlp(head, rng);
    if (config_.zero_head_init) {
      head.layers.back().weight->fill(0.0);
      head.layers.back().bias->fill(0.0);
    }
  }
  for (const auto& d : decoder_init_) nn::init_dense(d, rng);
  nn::init_gru(decoder_, rng);
  nn::init_dense(output_, rng);
  if (config_.zero_output_init) {
    output_.weight->fill(0.0);
    output_.bias->fill(0.0);
  }
}

DialogModel DialogModel::clone() const {
  DialogModel copy;
  copy.config_ = config_;
  copy.build();
  copy.params_->restore(params_->snapshot());
  return copy;
}

bool DialogModel::is_policy_parameter(const std::string& name) {
  return !(name.rfind("decoder", 0) == 0 || name.rfind("output", 0) == 0);
}

ad::Expr DialogModel::embed_token(ad::Graph& g, int token, bool training, Rng* rng) const {
  const int ids[] = {token};
  ad::Expr e = ad::lookup(g.parameter(*embedding_), ids);
  if (training && config_.dropout > 0.0) {
    if (rng == nullptr) throw ArgumentError("training forward pass requires an rng");
    e = ad::dropout(e, config_.dropout, true, *rng);
  }
  return e;
}

ad::Expr DialogModel::encode_utterance(ad::Graph& g, std::span<const int> tokens,
                                       bool training, Rng* rng) const {
  if (tokens.empty()) throw ArgumentError("cannot encode an empty utterance");
  std::vector<ad::Expr> xs;
  xs.reserve(tokens.size());
  for (int t : tokens) {
    if (t == Vocabulary::kPad) break;
    xs.push_back(embed_token(g, t, training, rng));
  }
  if (xs.empty()) throw ArgumentError("cannot encode an utterance of padding only");
  nn::GruRun run = nn::gru_sequence(g, encoder_, xs, {}, training, rng);
  return run.finals.back();
}

ContextState DialogModel::encode_context(ad::Graph& g, std::span<const Utterance> prefix,
                                         bool training, Rng* rng) const {
  if (prefix.empty()) throw ArgumentError("encode_context: empty dialog prefix");
  std::vector<ad::Expr> utterance_codes;
  utterance_codes.reserve(prefix.size());
  for (const auto& u : prefix) {
    utterance_codes.push_back(encode_utterance(g, u.tokens, training, rng));
  }
  ContextState ctx;
  ctx.prefix_length = prefix.size();
  ctx.summary = nn::gru_sequence(g, context_, utterance_codes, {}, training, rng).finals.back();
  if (!config_.schema.empty()) {
    std::vector<ad::Expr> attribute_inputs;
    for (const auto& u : prefix) {
      config_.schema.validate(u.attributes);
      std::vector<ad::Expr> parts;
      for (std::size_t k = 0; k < attribute_embeddings_.size(); ++k) {
        const int ids[] = {u.attributes[k]};
        parts.push_back(ad::lookup(g.parameter(*attribute_embeddings_[k]), ids));
      }
      attribute_inputs.push_back(ad::concat(parts, 1));
    }
    ctx.history =
        nn::gru_sequence(g, attribute_rnn_, attribute_inputs, {}, false, nullptr).finals.back();
  }
  return ctx;
}

std::vector<ad::Expr> DialogModel::attribute_logits(ad::Graph& g,
                                                    const ContextState& ctx) const {
  std::vector<ad::Expr> out;
  if (heads_.empty()) return out;
  const ad::Expr parts[] = {ctx.summary, ctx.history};
  ad::Expr input = ad::concat(parts, 1);
  for (const auto& head : heads_) out.push_back(nn::mlp_forward(g, head, input));
  return out;
}

AttributeLoss DialogModel::attribute_nll(ad::Graph& g, const ContextState& ctx,
                                         std::span<const int> gold) const {
  if (gold.size() != config_.schema.size()) {
    throw ArgumentError("attribute_nll: gold assignment arity mismatch");
  }
  AttributeLoss result;
  result.family_nll.assign(gold.size(), 0.0);
  std::vector<ad::Expr> terms;
  std::vector<ad::Expr> logits;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto& f = config_.schema.family(k);
    if (gold[k] == f.unknown()) continue;
    if (gold[k] < 0 || gold[k] > f.unknown()) {
      throw ArgumentError("attribute_nll: invalid label for family " + f.name);
    }
    if (logits.empty()) logits = attribute_logits(g, ctx);
    const int target[] = {gold[k]};
    ad::CrossEntropy ce = ad::softmax_cross_entropy(logits[k], target);
    result.family_nll[k] = ce.row_nll[0];
    terms.push_back(ce.loss);
    ++result.active_families;
  }
  if (terms.empty()) {
    result.loss = g.constant(Tensor::scalar(0.0));
  } else {
    result.loss = terms.size() == 1 ? terms[0] : ad::sum(ad::concat(terms, 1));
  }
  return result;
}

ad::Expr DialogModel::attribute_log_prob(ad::Graph& g, const ContextState& ctx,
                                         std::span<const int> assignment) const {
  if (assignment.size() != config_.schema.size()) {
    throw ArgumentError("attribute_log_prob: assignment arity mismatch");
  }
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    if (assignment[k] < 0 || assignment[k] >= config_.schema.family(k).unknown()) {
      throw ArgumentError("attribute_log_prob: action must be a known label");
    }
  }
  AttributeLoss nll = attribute_nll(g, ctx, assignment);
  return ad::scale(nll.loss, -1.0);
}

ConditioningVector DialogModel::build_conditioning(ad::Graph& g, const ContextState& ctx,
                                                   std::span<const int> assignment) const {
  std::vector<int> labels(assignment.begin(), assignment.end());
  config_.schema.validate(labels);
  ConditioningVector c;
  c.summary = ctx.summary;
  std::vector<ad::Expr> parts = {ctx.summary};
  c.offsets.push_back(0);
  c.widths.push_back(config_.context_hidden);
  std::size_t offset = config_.context_hidden;
  for (std::size_t k = 0; k < attribute_embeddings_.size(); ++k) {
    const int ids[] = {labels[k]};
    parts.push_back(ad::lookup(g.parameter(*attribute_embeddings_[k]), ids));
    c.offsets.push_back(offset);
    c.widths.push_back(config_.attribute_dim(k));
    offset += config_.attribute_dim(k);
  }
  c.vector = parts.size() == 1 ? parts[0] : ad::concat(parts, 1);
  return c;
}

std::vector<ad::Expr> DialogModel::decoder_initial(ad::Graph& g, ad::Expr summary) const {
  std::vector<ad::Expr> h;
  for (const auto& d : decoder_init_) h.push_back(nn::dense_forward(g, d, summary));
  return h;
}

DecodeResult DialogModel::score_tokens(ad::Graph& g, const ConditioningVector& c,
                                       std::span<const int> tokens,
                                       std::span<const std::uint8_t> mask, bool training,
                                       Rng* rng) const {
  if (tokens.empty()) throw ArgumentError("score_tokens: empty target");
  if (!mask.empty() && mask.size() != tokens.size()) {
    throw ShapeError("score_tokens: mask length differs from the target length");
  }
  if (c.vector.shape() != Shape{1, config_.conditioning_dim()}) {
    throw ShapeError("score_tokens: conditioning vector " + shape_string(c.vector.shape()) +
                     " does not match config width " +
                     std::to_string(config_.conditioning_dim()));
  }
  std::size_t steps = tokens.size();
  if (!mask.empty()) {
    while (steps > 0 && mask[steps - 1] == 0) --steps;  // trailing padding needs no decoding
    if (steps == 0) throw ArgumentError("score_tokens: every position is masked");
  }
  std::vector<ad::Expr> inputs;
  inputs.reserve(steps);
  int prev = Vocabulary::kSos;
  for (std::size_t i = 0; i < steps; ++i) {
    const ad::Expr parts[] = {embed_token(g, prev, training, rng), c.vector};
    inputs.push_back(ad::concat(parts, 1));
    prev = tokens[i];
  }
  std::vector<ad::Expr> h0 = decoder_initial(g, c.summary);
  nn::GruRun run = nn::gru_sequence(g, decoder_, inputs, h0, training, rng);
  ad::Expr top = run.outputs.size() == 1 ? run.outputs[0] : ad::concat(run.outputs, 0);
  ad::Expr logits = nn::dense_forward(g, output_, top);
  std::unique_ptr<bool[]> keep(new bool[steps]);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    keep[i] = mask.empty() || mask[i] != 0;
    counted += keep[i] ? 1 : 0;
  }
  ad::CrossEntropy ce = ad::softmax_cross_entropy(logits, tokens.first(steps),
                                                  std::span<const bool>(keep.get(), steps));
  DecodeResult result;
  result.loss = ce.loss;
  result.token_nll = std::move(ce.row_nll);
  result.token_nll.resize(tokens.size(), 0.0);
  result.tokens = counted;
  result.logits = logits;
  return result;
}

DecodeResult DialogModel::decode_utterance_nll(ad::Graph& g, const ConditioningVector& c,
                                               std::span<const int> target, bool training,
                                               Rng* rng) const {
  std::size_t length = target.size();
  while (length > 0 && target[length - 1] == Vocabulary::kPad) --length;
  if (length == 0 || target[length - 1] != Vocabulary::kEos) {
    throw ArgumentError("decode_utterance_nll: target must be EOS-terminated");
  }
  for (std::size_t i = 0; i + 1 < length; ++i) {
    if (target[i] == Vocabulary::kPad) {
      throw ArgumentError("decode_utterance_nll: interior PAD in target");
    }
  }
  std::vector<std::uint8_t> mask(target.size(), 0);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(length), 1);
  return score_tokens(g, c, target, mask, training, rng);
}

std::vector<int> DialogModel::generate(ad::Graph& g, const ConditioningVector& c,
                                       DecodeMode mode, std::size_t max_len,
                                       Rng* rng) const {
  if (max_len == 0) throw ArgumentError("generate: max_len must be at least 1");
  if (mode == DecodeMode::Sample && rng == nullptr) {
    throw ArgumentError("generate: sampling requires an rng");
  }
  std::vector<ad::Expr> hidden = decoder_initial(g, c.summary);
  std::vector<int> out;
  int prev = Vocabulary::kSos;
  while (out.size() < max_len) {
    const ad::Expr parts[] = {embed_token(g, prev, false, nullptr), c.vector};
    const ad::Expr x[] = {ad::concat(parts, 1)};
    nn::GruRun run = nn::gru_sequence(g, decoder_, x, hidden, false, nullptr);
    hidden = run.finals;
    Tensor probs = ad::softmax_rows(nn::dense_forward(g, output_, run.outputs[0]).value());
    auto p = probs.values();
    // PAD and SOS never appear inside an utterance; renormalise without them.
    const double excluded = p[Vocabulary::kPad] + p[Vocabulary::kSos];
    p[Vocabulary::kPad] = 0.0;
    p[Vocabulary::kSos] = 0.0;
    int next = 0;
    if (mode == DecodeMode::Greedy) {
      next = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      const double u = uniform01(*rng) * (1.0 - excluded);
      double acc = 0.0;
      next = static_cast<int>(p.size()) - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    out.push_back(next);
    if (next == Vocabulary::kEos) break;
    prev = next;
  }
  return out;
}

std::span<const Utterance> DialogModel::context_prefix(const Dialog& dialog,
                                                       std::size_t target) const {
  if (target == 0 || target >= dialog.size()) {
    throw ArgumentError("target index " + std::to_string(target) + " outside [1, " +
                        std::to_string(dialog.size()) + ")");
  }
  const std::size_t begin =
      target > config_.context_window ? target - config_.context_window : 0;
  return std::span<const Utterance>(dialog.utterances).subspan(begin, target - begin);
}

std::vector<std::vector<double>> DialogModel::predict_next_attributes(
    std::span<const Utterance> prefix) const {
  ad::Graph g;
  ContextState ctx = encode_context(g, prefix);
  std::vector<std::vector<double>> out;
  for (ad::Expr logits : attribute_logits(g, ctx)) {
    Tensor probs = ad::softmax_rows(logits.value());
    out.emplace_back(probs.values().begin(), probs.values().end());
  }
  return out;
}

std::vector<int> DialogModel::choose_attributes(std::span<const Utterance> prefix,
                                                DecodeMode mode, Rng* rng) const {
  if (mode == DecodeMode::Sample && rng == nullptr) {
    throw ArgumentError("choose_attributes: sampling requires an rng");
  }
  std::vector<int> out;
  for (const auto& probs : predict_next_attributes(prefix)) {
    if (mode == DecodeMode::Greedy) {
      out.push_back(static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                     probs.begin()));
    } else {
      std::discrete_distribution<int> dist(probs.begin(), probs.end());
      out.push_back(dist(*rng));
    }
  }
  return out;
}

JointNll DialogModel::joint_nll(const Dialog& dialog, std::size_t target) const {
  auto prefix = context_prefix(dialog, target);
  const Utterance& gold = dialog.utterances[target];
  ad::Graph g;
  ContextState ctx = encode_context(g, prefix);
  AttributeLoss attr = attribute_nll(g, ctx, gold.attributes);
  ConditioningVector c = build_conditioning(g, ctx, gold.attributes);
  DecodeResult dec = decode_utterance_nll(g, c, gold.tokens);
  JointNll out;
  out.attribute_nll = attr.loss.value()[0];
  out.utterance_nll = dec.loss.value()[0];
  out.tokens = dec.tokens;
  return out;
}

std::vector<int> DialogModel::respond(std::span<const Utterance> prefix,
                                      std::span<const int> assignment, DecodeMode mode,
                                      std::size_t max_len, Rng* rng) const {
  ad::Graph g;
  ContextState ctx = encode_context(g, prefix);
  ConditioningVector c = build_conditioning(g, ctx, assignment);
  return generate(g, c, mode, max_len, rng);
}

}  // namespace attrdialog

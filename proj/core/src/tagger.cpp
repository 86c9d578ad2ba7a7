// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/tagger.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "attrdialog/error.hpp"

namespace attrdialog {

std::string to_string(TaggerVariant v) {
  switch (v) {
    case TaggerVariant::U: return "u";
    case TaggerVariant::DA: return "da";
    case TaggerVariant::UDA: return "uda";
  }
  return "uda";
}

TaggerVariant parse_variant(const std::string& text) {
  std::string t;
  for (char ch : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (t == "u") return TaggerVariant::U;
  if (t == "da") return TaggerVariant::DA;
  if (t == "uda" || t == "u+da") return TaggerVariant::UDA;
  throw ArgumentError("unknown classifier variant '" + text + "' (expected u, da or uda)");
}

void ClassifierConfig::validate() const {
  if (family.known_count() == 0) {
    throw ArgumentError("classifier config: family '" + family.name + "' has no known labels");
  }
  if (uses_tokens() && (vocab_size <= Vocabulary::kEos || embed_dim == 0 || hidden == 0 ||
                        layers == 0)) {
    throw ArgumentError("classifier config: token encoder dimensions must be positive");
  }
  if (uses_history() && (label_dim == 0 || history_hidden == 0)) {
    throw ArgumentError("classifier config: history encoder dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ArgumentError("classifier config: dropout must lie in [0, 1)");
  }
}

nlohmann::json ClassifierConfig::to_json() const {
  std::vector<std::string> known(family.labels.begin(), family.labels.end() - 1);
  return {{"variant", to_string(variant)},
          {"family", {{"name", family.name}, {"labels", known}}},
          {"vocab_size", vocab_size},
          {"embed_dim", embed_dim},
          {"hidden", hidden},
          {"layers", layers},
          {"label_dim", label_dim},
          {"history_hidden", history_hidden},
          {"mlp_hidden", mlp_hidden},
          {"dropout", dropout},
          {"init_seed", init_seed},
          {"zero_mlp_init", zero_mlp_init}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  if (j.contains("family")) {
    c.family = AttributeFamily::make(j["family"].at("name").get<std::string>(),
                                     j["family"].at("labels").get<std::vector<std::string>>());
  }
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.label_dim = j.value("label_dim", c.label_dim);
  c.history_hidden = j.value("history_hidden", c.history_hidden);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.dropout = j.value("dropout", c.dropout);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.zero_mlp_init = j.value("zero_mlp_init", c.zero_mlp_init);
  return c;
}

AttributeClassifier::AttributeClassifier(ClassifierConfig config) : config_(std::move(config)) {
  config_.validate();
  build();
  initialize(config_.init_seed);
}

void AttributeClassifier::build() {
  params_ = std::make_unique<ParameterSet>();
  ParameterSet& p = *params_;
  std::size_t features = 0;
  if (config_.uses_tokens()) {
    embedding_ = &p.add("embedding", {config_.vocab_size, config_.embed_dim});
    encoder_ = nn::make_gru_stack(p, "encoder", config_.embed_dim, config_.hidden,
                                  config_.layers, config_.dropout);
    features += config_.hidden;
  }
  if (config_.uses_history()) {
    label_embedding_ = &p.add("label_embedding", {config_.family.label_count(), config_.label_dim});
    history_rnn_ = nn::make_gru_stack(p, "history", config_.label_dim, config_.history_hidden,
                                      1, 0.0);
    features += config_.history_hidden;
  }
  std::vector<std::size_t> dims = {features};
  if (config_.mlp_hidden > 0) dims.push_back(config_.mlp_hidden);
  dims.push_back(config_.family.known_count());
  mlp_ = nn::make_mlp(p, "mlp", dims);
}

void AttributeClassifier::initialize(std::uint64_t seed) {
  Rng rng(seed);
  if (embedding_ != nullptr) {
    nn::init_uniform(*embedding_, std::sqrt(3.0 / static_cast<double>(config_.embed_dim)), rng);
    nn::init_gru(encoder_, rng);
  }
  if (label_embedding_ != nullptr) {
    nn::init_uniform(*label_embedding_,
                     std::sqrt(3.0 / static_cast<double>(config_.label_dim)), rng);
    nn::init_gru(history_rnn_, rng);
  }
  nn::init_mlp(mlp_, rng);
  if (config_.zero_mlp_init) {
    for (const auto& layer : mlp_.layers) {
      layer.weight->fill(0.0);
      layer.bias->fill(0.0);
    }
  }
}

AttributeClassifier AttributeClassifier::clone() const {
  AttributeClassifier copy;
  copy.config_ = config_;
  copy.build();
  copy.params_->restore(params_->snapshot());
  return copy;
}

ad::Expr AttributeClassifier::logits(ad::Graph& g, std::span<const int> tokens,
                                     const LabelHistory& history, bool training,
                                     Rng* rng) const {
  std::vector<ad::Expr> features;
  if (config_.uses_tokens()) {
    std::vector<ad::Expr> xs;
    for (int t : tokens) {
      if (t == Vocabulary::kPad) break;
      const int ids[] = {t};
      ad::Expr e = ad::lookup(g.parameter(*embedding_), ids);
      if (training && config_.dropout > 0.0) {
        if (rng == nullptr) throw ArgumentError("training forward pass requires an rng");
        e = ad::dropout(e, config_.dropout, true, *rng);
      }
      xs.push_back(e);
    }
    if (xs.empty()) throw ArgumentError("classifier: utterance has no tokens");
    features.push_back(nn::gru_sequence(g, encoder_, xs, {}, training, rng).finals.back());
  }
  if (config_.uses_history()) {
    const int unknown = config_.family.unknown();
    std::vector<ad::Expr> xs;
    // Chronological order: U_{t-2} first.
    for (int label : {history[1], history[0]}) {
      if (label < 0 || label > unknown) {
        throw ArgumentError("classifier: history label out of range for family " +
                            config_.family.name);
      }
      const int ids[] = {label};
      xs.push_back(ad::lookup(g.parameter(*label_embedding_), ids));
    }
    features.push_back(nn::gru_sequence(g, history_rnn_, xs, {}, false, nullptr).finals.back());
  }
  ad::Expr input = features.size() == 1 ? features[0] : ad::concat(features, 1);
  return nn::mlp_forward(g, mlp_, input);
}

std::vector<double> AttributeClassifier::classify(std::span<const int> tokens,
                                                  const LabelHistory& history) const {
  ad::Graph g;
  Tensor probs = ad::softmax_rows(logits(g, tokens, history).value());
  return {probs.values().begin(), probs.values().end()};
}

int AttributeClassifier::predict(std::span<const int> tokens,
                                 const LabelHistory& history) const {
  auto p = classify(tokens, history);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<ClassifierExample> classifier_examples(const std::vector<Dialog>& dialogs,
                                                   const AttributeSchema& schema,
                                                   std::size_t family_index) {
  if (family_index >= schema.size()) throw ArgumentError("classifier: family index out of range");
  const int unknown = schema.family(family_index).unknown();
  std::vector<ClassifierExample> out;
  for (const auto& d : dialogs) {
    for (std::size_t t = 0; t < d.size(); ++t) {
      const int label = d.utterances[t].attributes.at(family_index);
      if (label == unknown) continue;
      ClassifierExample ex;
      ex.tokens = d.utterances[t].tokens;
      ex.label = label;
      ex.history[0] = t >= 1 ? d.utterances[t - 1].attributes[family_index] : unknown;
      ex.history[1] = t >= 2 ? d.utterances[t - 2].attributes[family_index] : unknown;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

ClassifierScore evaluate_classifier(const AttributeClassifier& model,
                                    std::span<const ClassifierExample> examples) {
  ClassifierScore s;
  for (const auto& ex : examples) {
    if (model.predict(ex.tokens, ex.history) == ex.label) ++s.correct;
    ++s.total;
  }
  s.accuracy = s.total == 0 ? 0.0 : static_cast<double>(s.correct) / static_cast<double>(s.total);
  return s;
}

int majority_label(std::span<const ClassifierExample> examples, std::size_t label_count) {
  std::vector<std::size_t> counts(label_count, 0);
  for (const auto& ex : examples) counts.at(static_cast<std::size_t>(ex.label))++;
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

ClassifierTraining train_classifier(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema, ClassifierConfig config,
                                    const ClassifierHyper& hyper) {
  auto family_index = schema.find(config.family.name);
  if (!family_index) {
    throw ArgumentError("classifier: family '" + config.family.name + "' not in corpus schema");
  }
  if (schema.family(*family_index).labels != config.family.labels) {
    throw ArgumentError("classifier: label set of '" + config.family.name +
                        "' differs from the corpus schema");
  }
  if (hyper.batch_size == 0) throw ArgumentError("classifier: batch_size must be positive");
  auto [train_dialogs, valid_dialogs] = split_dialogs(dialogs, hyper.validation_fraction);
  auto train = classifier_examples(train_dialogs, schema, *family_index);
  auto valid = classifier_examples(valid_dialogs, schema, *family_index);
  if (train.empty()) throw ArgumentError("classifier: no labelled training examples");
  if (valid.empty()) valid = train;

  ClassifierTraining result{AttributeClassifier(std::move(config)), 0.0, 0.0, {}};
  AttributeClassifier& model = result.model;
  const int majority = majority_label(train, model.family().known_count());
  std::size_t majority_hits = 0;
  for (const auto& ex : valid) majority_hits += ex.label == majority ? 1 : 0;
  result.majority_accuracy = static_cast<double>(majority_hits) / static_cast<double>(valid.size());

  Rng rng(hyper.seed);
  AdamState adam;
  adam.config.learning_rate = hyper.learning_rate;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best = -1.0;
  std::vector<Tensor> best_params;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      ad::Graph g;
      std::vector<ad::Expr> rows;
      std::vector<int> targets;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& ex = train[order[i]];
        rows.push_back(model.logits(g, ex.tokens, ex.history, true, &rng));
        targets.push_back(ex.label);
      }
      ad::Expr stacked = rows.size() == 1 ? rows[0] : ad::concat(rows, 0);
      ad::CrossEntropy ce = ad::softmax_cross_entropy(stacked, targets);
      model.parameters().zero_grad();
      g.backward(ce.loss);
      model.parameters().clip_grad_norm(5.0);
      adam_step(model.parameters(), adam);
    }
    const double acc = evaluate_classifier(model, valid).accuracy;
    result.epoch_accuracy.push_back(acc);
    if (acc > best) {
      best = acc;
      best_params = model.parameters().snapshot();
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  if (!best_params.empty()) model.parameters().restore(best_params);
  model.parameters().zero_grad();
  result.validation_accuracy = std::max(best, 0.0);
  return result;
}

std::vector<Dialog> annotate_corpus(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema,
                                    std::span<const std::size_t> families,
                                    std::span<const LabelPredictor> predictors) {
  if (families.size() != predictors.size()) {
    throw ArgumentError("annotate_corpus: one predictor per family is required");
  }
  for (std::size_t k : families) {
    if (k >= schema.size()) throw ArgumentError("annotate_corpus: family index out of range");
  }
  std::vector<Dialog> out = dialogs;
  for (auto& d : out) {
    for (std::size_t t = 0; t < d.size(); ++t) {
      for (std::size_t i = 0; i < families.size(); ++i) {
        const std::size_t k = families[i];
        const int unknown = schema.family(k).unknown();
        int& label = d.utterances[t].attributes.at(k);
        if (label != unknown) continue;
        LabelHistory history{t >= 1 ? d.utterances[t - 1].attributes[k] : unknown,
                             t >= 2 ? d.utterances[t - 2].attributes[k] : unknown};
        const int predicted = predictors[i](d.utterances[t].tokens, history);
        if (predicted < 0 || predicted >= unknown) {
          throw ArgumentError("annotate_corpus: predictor returned an invalid label for " +
                              schema.family(k).name);
        }
        label = predicted;
      }
    }
  }
  return out;
}

std::vector<Dialog> annotate_corpus(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema,
                                    std::span<const AttributeClassifier* const> classifiers) {
  std::vector<std::size_t> families;
  std::vector<LabelPredictor> predictors;
  for (const AttributeClassifier* c : classifiers) {
    auto k = schema.find(c->family().name);
    if (!k) {
      throw ArgumentError("annotate_corpus: no corpus family named '" + c->family().name + "'");
    }
    if (schema.family(*k).labels != c->family().labels) {
      throw ArgumentError("annotate_corpus: classifier labels for '" + c->family().name +
                          "' differ from the corpus schema");
    }
    families.push_back(*k);
    predictors.emplace_back([c](std::span<const int> tokens, const LabelHistory& h) {
      return c->predict(tokens, h);
    });
  }
  return annotate_corpus(dialogs, schema, families, predictors);
}

}  // namespace attrdialog

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/adam.hpp"
#include "attrdialog/corpus.hpp"
#include "attrdialog/graph.hpp"
#include "attrdialog/layers.hpp"
#include "attrdialog/parameters.hpp"
#include "attrdialog/rng.hpp"

namespace attrdialog {

/// Which inputs the classifier sees: the utterance tokens, the two previous
/// labels, or both.
enum class TaggerVariant { U, DA, UDA };

std::string to_string(TaggerVariant v);
/// Accepts "u", "da", "uda" (case-insensitive; "u+da" too).
TaggerVariant parse_variant(const std::string& text);

/// Labels of U_{t-1} and U_{t-2}, "unknown" where the utterance is missing.
using LabelHistory = std::array<int, 2>;

struct ClassifierConfig {
  TaggerVariant variant = TaggerVariant::UDA;
  AttributeFamily family;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;          ///< token GRU width
  std::size_t layers = 2;
  std::size_t label_dim = 16;       ///< label embedding width
  std::size_t history_hidden = 32;  ///< label-history GRU width
  std::size_t mlp_hidden = 64;
  double dropout = 0.0;
  std::uint64_t init_seed = 0;
  bool zero_mlp_init = false;

  bool uses_tokens() const { return variant != TaggerVariant::DA; }
  bool uses_history() const { return variant != TaggerVariant::U; }
  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

class AttributeClassifier {
 public:
  explicit AttributeClassifier(ClassifierConfig config);
  AttributeClassifier(AttributeClassifier&&) noexcept = default;
  AttributeClassifier& operator=(AttributeClassifier&&) noexcept = default;
  AttributeClassifier clone() const;

  const ClassifierConfig& config() const { return config_; }
  const AttributeFamily& family() const { return config_.family; }
  ParameterSet& parameters() { return *params_; }
  const ParameterSet& parameters() const { return *params_; }
  void initialize(std::uint64_t seed);

  /// 1×known_count logits. Inputs the variant does not use are ignored.
  ad::Expr logits(ad::Graph& g, std::span<const int> tokens, const LabelHistory& history,
                  bool training = false, Rng* rng = nullptr) const;
  std::vector<double> classify(std::span<const int> tokens,
                               const LabelHistory& history) const;
  int predict(std::span<const int> tokens, const LabelHistory& history) const;

 private:
  AttributeClassifier() = default;
  void build();

  ClassifierConfig config_;
  std::unique_ptr<ParameterSet> params_;
  Tensor* embedding_ = nullptr;
  nn::GruStack encoder_;
  Tensor* label_embedding_ = nullptr;
  nn::GruStack history_rnn_;
  nn::Mlp mlp_;
};

/// One labelled utterance with its label history.
struct ClassifierExample {
  std::vector<int> tokens;
  LabelHistory history{};
  int label = 0;
};

/// Every utterance with a known gold label for `family_index`.
std::vector<ClassifierExample> classifier_examples(const std::vector<Dialog>& dialogs,
                                                   const AttributeSchema& schema,
                                                   std::size_t family_index);

struct ClassifierHyper {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double validation_fraction = 0.1;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
};

struct ClassifierTraining {
  AttributeClassifier model;
  double validation_accuracy = 0.0;
  /// Accuracy of always predicting the most frequent training label.
  double majority_accuracy = 0.0;
  std::vector<double> epoch_accuracy;
};

/// Adam MLE on a dialog-level split; returns the best-validation weights.
ClassifierTraining train_classifier(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema,
                                    ClassifierConfig config, const ClassifierHyper& hyper);

struct ClassifierScore {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

ClassifierScore evaluate_classifier(const AttributeClassifier& model,
                                    std::span<const ClassifierExample> examples);
int majority_label(std::span<const ClassifierExample> examples, std::size_t label_count);

/// Predicts a label from tokens and label history.
using LabelPredictor = std::function<int(std::span<const int>, const LabelHistory&)>;

/// Fills "unknown" labels left to right so later utterances see predicted
/// history. `predictors[i]` tags schema family `families[i]`.
std::vector<Dialog> annotate_corpus(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema,
                                    std::span<const std::size_t> families,
                                    std::span<const LabelPredictor> predictors);
/// Classifier overload: each classifier tags the schema family of its name.
std::vector<Dialog> annotate_corpus(const std::vector<Dialog>& dialogs,
                                    const AttributeSchema& schema,
                                    std::span<const AttributeClassifier* const> classifiers);

}  // namespace attrdialog

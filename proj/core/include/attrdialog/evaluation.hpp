// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/corpus.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/rng.hpp"
#include "attrdialog/vocabulary.hpp"

namespace attrdialog {

struct PerplexityResult {
  double perplexity = 0.0;
  double total_nll = 0.0;   ///< natural log, summed over tokens
  std::size_t tokens = 0;
  std::size_t examples = 0;
};

/// exp(Σ token NLL / Σ tokens) over every (context, target) pair of the
/// split. Gold attributes condition the decoder unless
/// `predicted_attributes`, in which case the model's argmax is used.
PerplexityResult corpus_perplexity(const DialogModel& model, std::span<const Dialog> split,
                                   bool predicted_attributes = false);
double perplexity(const DialogModel& model, std::span<const Dialog> split,
                  bool predicted_attributes = false);

/// Distinct n-grams / total n-grams, counting n-grams inside each response
/// only. Returns 0 when no response is long enough to hold an n-gram.
double distinct_n(std::span<const std::vector<int>> responses, std::size_t n);
double distinct_n(std::span<const std::vector<std::string>> responses, std::size_t n);

/// Percentage (0-100) of responses starting with each phrase.
std::vector<double> generic_response_rate(std::span<const std::vector<int>> responses,
                                          std::span<const std::vector<int>> phrases);

/// Word vectors read from "token v1 ... vd" lines.
class WordVectors {
 public:
  WordVectors() = default;
  explicit WordVectors(std::size_t dim) : dim_(dim) {}

  static WordVectors load(const std::filesystem::path& path);
  static WordVectors parse(const std::string& text);

  void add(const std::string& token, std::vector<double> vector);
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  /// Vector of `token`, falling back to the "<unk>" entry; null if neither.
  const std::vector<double>* lookup(const std::string& token) const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct EmbeddingScores {
  double average = 0.0;
  double greedy = 0.0;
  double extrema = 0.0;
};

using TokenPair = std::pair<std::vector<std::string>, std::vector<std::string>>;

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double embedding_average(const std::vector<std::string>& reference,
                         const std::vector<std::string>& hypothesis, const WordVectors& wv);
double embedding_greedy(const std::vector<std::string>& reference,
                        const std::vector<std::string>& hypothesis, const WordVectors& wv);
double embedding_extrema(const std::vector<std::string>& reference,
                         const std::vector<std::string>& hypothesis, const WordVectors& wv);
/// Means of the three per-pair scores.
EmbeddingScores embedding_metrics(std::span<const TokenPair> pairs, const WordVectors& wv);

struct GeneratedResponse {
  std::size_t dialog = 0;
  std::size_t target = 0;
  std::vector<int> attributes;  ///< attributes the response was conditioned on
  std::vector<int> reference;   ///< gold tokens, EOS removed
  std::vector<int> response;    ///< generated tokens, EOS removed
};

struct GenerationOptions {
  DecodeMode attribute_mode = DecodeMode::Greedy;
  DecodeMode token_mode = DecodeMode::Greedy;
  std::size_t max_len = 20;
  /// Use at most this many (dialog, target) pairs; 0 means all.
  std::size_t max_examples = 0;
  /// Only the last utterance of each dialog is a target.
  bool last_turn_only = false;
};

/// Predicts attributes for each context and decodes a response.
std::vector<GeneratedResponse> generate_responses(const DialogModel& model,
                                                  std::span<const Dialog> dialogs,
                                                  const GenerationOptions& options,
                                                  Rng* rng = nullptr);

/// Full evaluation report keyed by metric name. The embedding metrics are
/// null when no word vectors are given.
nlohmann::json evaluation_report(const DialogModel& model, const Vocabulary& vocab,
                                 std::span<const Dialog> split, const WordVectors* vectors,
                                 const DullSet* dull, const GenerationOptions& options,
                                 Rng* rng = nullptr);

}  // namespace attrdialog

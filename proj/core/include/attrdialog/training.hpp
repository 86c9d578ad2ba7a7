// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/adam.hpp"
#include "attrdialog/corpus.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/rng.hpp"

namespace attrdialog {

/// Row-major int matrix padded with PAD.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> data;

  std::span<const int> row(std::size_t r) const {
    return std::span<const int>(data).subspan(r * cols, cols);
  }
};

/// A group of (context, target) examples. Context slot j holds the j-th of
/// the last `window` utterances before the target, right-aligned so slot
/// window-1 is always the utterance immediately before it.
struct Batch {
  std::size_t window = 0;
  std::vector<TokenMatrix> context_tokens;                ///< [window] of B×L_j
  std::vector<std::vector<std::size_t>> context_lengths;  ///< [window][B], 0 = absent
  std::vector<std::vector<std::vector<int>>> context_attributes;  ///< [window][B][K]
  std::vector<std::size_t> context_counts;                ///< present slots per example
  TokenMatrix target_tokens;
  std::vector<std::uint8_t> target_mask;  ///< 1 for real tokens, 0 for PAD
  std::vector<std::size_t> target_lengths;
  std::vector<std::vector<int>> target_attributes;        ///< [B][K]
  std::vector<std::vector<std::uint8_t>> attribute_mask;  ///< 0 where the label is unknown

  std::size_t size() const { return target_tokens.rows; }
  /// Context utterances of example b, oldest first, without padding.
  std::vector<Utterance> context(std::size_t b) const;
  /// Target of example b without padding.
  Utterance target(std::size_t b) const;
};

/// One example per (dialog, m) with m >= 1 (0-based), shuffled by `rng` and
/// grouped into batches of at most `batch_size`.
std::vector<Batch> make_batches(std::span<const Dialog> dialogs, const AttributeSchema& schema,
                                std::size_t batch_size, std::size_t context_window, Rng& rng);

struct JointBatchLoss {
  ad::Expr loss;            ///< batch mean of attribute NLL + mean token NLL
  double attribute_nll = 0.0;
  double token_nll = 0.0;   ///< summed over tokens
  std::size_t tokens = 0;
};

/// Builds the training objective of one batch on `g`.
JointBatchLoss batch_loss(ad::Graph& g, const DialogModel& model, const Batch& batch,
                          bool training, Rng* rng);

struct TrainHyper {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainHyper from_json(const nlohmann::json& j);
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double valid_ppl = 0.0;
  nlohmann::json to_json() const;
};

struct TrainResult {
  DialogModel model;
  AdamState adam;
  std::uint64_t step = 0;
  std::size_t best_epoch = 0;
  double best_valid_ppl = 0.0;
  std::vector<EpochLog> log;
  std::vector<double> batch_losses;  ///< every update, in order
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on batch-mean joint NLL with gradient clipping and early stopping on
/// validation perplexity. Returns the best-validation weights.
TrainResult train_mle(std::span<const Dialog> train, std::span<const Dialog> valid,
                      ModelConfig config, const TrainHyper& hyper,
                      const EpochCallback& on_epoch = {});
/// Splits `corpus` by dialog using hyper.validation_fraction.
TrainResult train_mle(const std::vector<Dialog>& corpus, ModelConfig config,
                      const TrainHyper& hyper, const EpochCallback& on_epoch = {});

}  // namespace attrdialog

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

struct RlConfig {
  DullSet dull;
  double baseline_decay = 0.95;
  double anchor = 0.01;  ///< coefficient of ‖θ − θ_supervised‖²
  std::size_t samples_per_context = 1;
  std::size_t batch_size = 8;  ///< contexts per step
  DecodeMode response_mode = DecodeMode::Greedy;
  std::size_t max_response_len = 20;
  /// Attribute rule for the utterance after the response when scoring dull
  /// replies.
  DecodeMode scorer_attribute_mode = DecodeMode::Greedy;
  bool freeze_scorer = false;
  double learning_rate = 1e-3;
  std::size_t steps = 200;
  std::uint64_t seed = 0;

  void validate() const;
  /// Everything except the dull set.
  nlohmann::json to_json() const;
  static RlConfig from_json(const nlohmann::json& j);
};

struct RewardResult {
  double reward = 0.0;
  std::vector<double> log_likelihoods;  ///< log P(s | context, response), one per dull reply
  std::vector<int> response;            ///< generated U_m, EOS-terminated
};

/// −(1/|S|) Σ_s log P(s) / N_s.
double ease_of_answering(std::span<const double> log_likelihoods,
                         std::span<const std::size_t> lengths);

/// Generates a response with `generator` under `attributes`, appends it to
/// `context` and scores every dull reply with `scorer`.
RewardResult ease_of_answering_reward(const DialogModel& generator, const DialogModel& scorer,
                                      std::span<const Utterance> context,
                                      std::span<const int> attributes, const RlConfig& config,
                                      Rng* rng = nullptr);

/// Reward of choosing `attributes` after `context`.
using RewardFn =
    std::function<double(std::span<const Utterance> context, std::span<const int> attributes,
                         Rng& rng)>;

struct RlState {
  AdamState adam;
  double baseline = 0.0;
  bool baseline_ready = false;
  std::uint64_t step = 0;
  std::vector<Tensor> anchor;  ///< supervised weights, never modified
};

RlState make_rl_state(const DialogModel& supervised, const RlConfig& config);

struct RlStepReport {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double baseline = 0.0;
  double anchor_distance = 0.0;  ///< ‖θ − θ_supervised‖ after the update
  nlohmann::json to_json() const;
};

/// Draws one label per family from the model's predicted distributions.
std::vector<int> sample_attributes(const DialogModel& model, std::span<const Utterance> context,
                                   Rng& rng);

/// Adds scale·∇ log P(attributes | context) to the policy parameters' gradients.
/// Returns log P(attributes | context).
double accumulate_log_prob_gradient(DialogModel& model, std::span<const Utterance> context,
                                    std::span<const int> attributes, double scale);

/// One REINFORCE update over a batch of contexts. The loss minimised is
/// −mean (R − b) log P(a) + anchor·‖θ − θ_supervised‖²; decoder weights only
/// see the anchor term.
RlStepReport reinforce_step(DialogModel& model,
                            std::span<const std::vector<Utterance>> contexts, RlState& state,
                            const RlConfig& config, const RewardFn& reward, Rng& rng);

struct RlResult {
  DialogModel model;
  RlState state;
  std::vector<RlStepReport> report;
};

/// Fine-tunes a copy of `supervised` on contexts sampled from `dialogs`
/// with the ease-of-answering reward.
RlResult rl_finetune(const std::vector<Dialog>& dialogs, const DialogModel& supervised,
                     const RlConfig& config,
                     const std::function<void(const RlStepReport&)>& on_step = {});

}  // namespace attrdialog

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/corpus.hpp"
#include "attrdialog/graph.hpp"
#include "attrdialog/layers.hpp"
#include "attrdialog/parameters.hpp"
#include "attrdialog/rng.hpp"

namespace attrdialog {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t encoder_hidden = 64;   ///< token-level encoder
  std::size_t context_hidden = 64;   ///< utterance-level encoder, dim(s)
  std::size_t decoder_hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t context_layers = 1;
  std::size_t decoder_layers = 2;
  std::size_t attribute_hidden = 32; ///< attribute-history GRU
  std::size_t head_hidden = 64;      ///< 0 gives linear prediction heads
  /// Per-family attribute embedding width; empty means 16 for every family.
  std::vector<std::size_t> attribute_dims;
  double dropout = 0.3;
  std::size_t context_window = 2;
  std::uint64_t init_seed = 0;
  bool zero_output_init = false;
  bool zero_head_init = false;
  AttributeSchema schema;

  std::size_t attribute_dim(std::size_t family) const;
  std::size_t attribute_total() const;
  std::size_t conditioning_dim() const { return context_hidden + attribute_total(); }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Encoded dialog prefix: s (utterance-level summary) and the final hidden
/// of the attribute-history GRU (invalid when the schema is empty).
struct ContextState {
  ad::Expr summary;
  ad::Expr history;
  std::size_t prefix_length = 0;
};

/// c = [s; da_1; ...; da_K] with the column offset of each segment.
struct ConditioningVector {
  ad::Expr vector;
  ad::Expr summary;
  std::vector<std::size_t> offsets;  ///< offsets[0] = 0 for s, then one per family
  std::vector<std::size_t> widths;
};

struct DecodeResult {
  ad::Expr loss;                  ///< mean per-token NLL
  std::vector<double> token_nll;  ///< one entry per target position
  std::size_t tokens = 0;         ///< unmasked positions
  ad::Expr logits;                ///< one row per decoded position
  double total_nll() const;
};

struct AttributeLoss {
  ad::Expr loss;                    ///< sum over families with a known gold label
  std::vector<double> family_nll;   ///< 0 for masked families
  std::size_t active_families = 0;
};

/// Likelihood factors for one (dialog, target) pair.
struct JointNll {
  double attribute_nll = 0.0;
  double utterance_nll = 0.0;  ///< mean per-token NLL of the target
  std::size_t tokens = 0;
  /// Training objective: attribute NLL sum plus mean token NLL.
  double value() const { return attribute_nll + utterance_nll; }
  /// -log P(DA, U | context) with the utterance term summed over tokens.
  double sequence_nll() const {
    return attribute_nll + utterance_nll * static_cast<double>(tokens);
  }
};

enum class DecodeMode { Greedy, Sample };

/// Attribute-conditional HRED: token-level encoder, utterance-level
/// encoder, attribute-history GRU, per-family attribute heads and a
/// decoder that sees c at every step.
class DialogModel {
 public:
  explicit DialogModel(ModelConfig config);
  DialogModel(DialogModel&&) noexcept = default;
  DialogModel& operator=(DialogModel&&) noexcept = default;

  /// Deep copy with identical parameter values.
  DialogModel clone() const;

  const ModelConfig& config() const { return config_; }
  const AttributeSchema& schema() const { return config_.schema; }
  ParameterSet& parameters() { return *params_; }
  const ParameterSet& parameters() const { return *params_; }

  /// True for parameters that belong to the attribute-selection policy
  /// (encoders, attribute embeddings and RNN, prediction heads).
  static bool is_policy_parameter(const std::string& name);

  /// Re-draws every parameter from the configured initialisers.
  void initialize(std::uint64_t seed);

  ContextState encode_context(ad::Graph& g, std::span<const Utterance> prefix,
                              bool training = false, Rng* rng = nullptr) const;

  /// One logit row per family over its known labels.
  std::vector<ad::Expr> attribute_logits(ad::Graph& g, const ContextState& ctx) const;
  /// Negative log-likelihood of `gold`; families whose gold label is
  /// "unknown" are excluded.
  AttributeLoss attribute_nll(ad::Graph& g, const ContextState& ctx,
                              std::span<const int> gold) const;
  /// Σ_k log P(DA_k = assignment[k] | context); all labels must be known.
  ad::Expr attribute_log_prob(ad::Graph& g, const ContextState& ctx,
                              std::span<const int> assignment) const;

  ConditioningVector build_conditioning(ad::Graph& g, const ContextState& ctx,
                                        std::span<const int> assignment) const;

  /// Teacher-forced NLL of an arbitrary token sequence (first input SOS).
  /// Positions with mask 0 are excluded; an empty mask counts every position.
  DecodeResult score_tokens(ad::Graph& g, const ConditioningVector& c,
                            std::span<const int> tokens, std::span<const std::uint8_t> mask,
                            bool training = false, Rng* rng = nullptr) const;
  /// NLL of an EOS-terminated target, optionally followed by PAD positions,
  /// which are masked.
  DecodeResult decode_utterance_nll(ad::Graph& g, const ConditioningVector& c,
                                    std::span<const int> target, bool training = false,
                                    Rng* rng = nullptr) const;

  /// Autoregressive decoding from SOS; stops after EOS or max_len tokens.
  std::vector<int> generate(ad::Graph& g, const ConditioningVector& c, DecodeMode mode,
                            std::size_t max_len, Rng* rng = nullptr) const;

  // Graph-free conveniences ------------------------------------------------

  /// The last context_window utterances before `target`.
  std::span<const Utterance> context_prefix(const Dialog& dialog, std::size_t target) const;

  std::vector<std::vector<double>> predict_next_attributes(
      std::span<const Utterance> prefix) const;
  /// Per-family argmax over known labels (or samples when mode is Sample).
  std::vector<int> choose_attributes(std::span<const Utterance> prefix, DecodeMode mode,
                                     Rng* rng = nullptr) const;
  /// Joint NLL of utterance `target` (0-based, >= 1) given its context.
  JointNll joint_nll(const Dialog& dialog, std::size_t target) const;
  std::vector<int> respond(std::span<const Utterance> prefix,
                           std::span<const int> assignment, DecodeMode mode,
                           std::size_t max_len, Rng* rng = nullptr) const;

 private:
  DialogModel() = default;
  void build();
  ad::Expr encode_utterance(ad::Graph& g, std::span<const int> tokens, bool training,
                            Rng* rng) const;
  ad::Expr embed_token(ad::Graph& g, int token, bool training, Rng* rng) const;
  std::vector<ad::Expr> decoder_initial(ad::Graph& g, ad::Expr summary) const;

  ModelConfig config_;
  std::unique_ptr<ParameterSet> params_;
  Tensor* embedding_ = nullptr;
  nn::GruStack encoder_;
  nn::GruStack context_;
  std::vector<Tensor*> attribute_embeddings_;
  nn::GruStack attribute_rnn_;
  std::vector<nn::Mlp> heads_;
  std::vector<nn::Dense> decoder_init_;
  nn::GruStack decoder_;
  nn::Dense output_;
};

}  // namespace attrdialog

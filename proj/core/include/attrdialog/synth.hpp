// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/corpus.hpp"

namespace attrdialog {

struct SynthTemplate {
  std::string text;  ///< may contain "{topic}", replaced by the dialog topic
  double probability = 0.0;
};

/// Generator tables of one attribute family.
struct SynthFamily {
  std::string name;
  std::vector<std::string> labels;
  /// transitions[prev2][prev1][label] = P(DA_t = label | DA_{t-1}, DA_{t-2}).
  /// Index labels.size() stands for "no utterance yet".
  std::vector<std::vector<std::vector<double>>> transitions;
  /// templates[label] = utterance distribution given the label.
  std::vector<std::vector<SynthTemplate>> templates;

  std::size_t start() const { return labels.size(); }
};

/// Full description of a synthetic corpus. Utterance text is the
/// concatenation of one template per family, in family order.
struct SynthSpec {
  std::vector<SynthFamily> families;
  std::vector<std::string> topics;  ///< uniform per dialog; empty = no topic slot
  std::size_t dialogs = 100;
  std::size_t min_length = 2;
  std::size_t max_length = 4;

  /// Throws ArgumentError if any distribution deviates from 1 by more than
  /// 1e-9 or a table has the wrong arity.
  void validate() const;
  AttributeSchema schema() const;

  /// Accepts either a full "transitions" table or a "first_order" table
  /// indexed by the previous label only.
  static SynthSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Generative path of one dialog: everything needed for its exact likelihood.
struct SynthTrace {
  int topic = -1;
  /// labels[t][k], templates[t][k] for utterance t and family k.
  std::vector<std::vector<int>> labels;
  std::vector<std::vector<int>> templates;
};

struct SynthResult {
  RawCorpus corpus;
  std::vector<SynthTrace> traces;
};

SynthResult synthesize_corpus(const SynthSpec& spec, std::uint64_t seed);

/// Exact log-probability of a generated path under the generator tables. Dialog
/// length is uniform on [min_length, max_length] and is included.
double trace_log_likelihood(const SynthSpec& spec, const SynthTrace& trace);

/// Renders the utterance text of step t of a trace.
std::string render_utterance(const SynthSpec& spec, const SynthTrace& trace, std::size_t t);

}  // namespace attrdialog

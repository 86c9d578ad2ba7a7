// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/rl.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "attrdialog/error.hpp"

namespace attrdialog {

namespace {

std::span<const Utterance> last_window(std::span<const Utterance> context, std::size_t window) {
  if (context.size() <= window) return context;
  return context.subspan(context.size() - window);
}

const char* mode_name(DecodeMode m) { return m == DecodeMode::Greedy ? "greedy" : "sample"; }

DecodeMode parse_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::Greedy;
  if (s == "sample") return DecodeMode::Sample;
  throw ArgumentError("unknown decode mode '" + s + "' (expected greedy or sample)");
}

}  // namespace

void RlConfig::validate() const {
  if (!(baseline_decay > 0.0 && baseline_decay <= 1.0)) {
    throw ArgumentError("rl config: baseline_decay must lie in (0, 1]");
  }
  if (!(anchor >= 0.0)) throw ArgumentError("rl config: anchor must be non-negative");
  if (samples_per_context == 0) throw ArgumentError("rl config: samples_per_context must be >= 1");
  if (batch_size == 0) throw ArgumentError("rl config: batch_size must be >= 1");
  if (max_response_len == 0) throw ArgumentError("rl config: max_response_len must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("rl config: learning_rate must be positive");
}

nlohmann::json RlConfig::to_json() const {
  return {{"baseline_decay", baseline_decay},
          {"anchor", anchor},
          {"samples_per_context", samples_per_context},
          {"batch_size", batch_size},
          {"response_mode", mode_name(response_mode)},
          {"max_response_len", max_response_len},
          {"scorer_attribute_mode", mode_name(scorer_attribute_mode)},
          {"freeze_scorer", freeze_scorer},
          {"learning_rate", learning_rate},
          {"steps", steps},
          {"seed", seed}};
}

RlConfig RlConfig::from_json(const nlohmann::json& j) {
  RlConfig c;
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.anchor = j.value("anchor", c.anchor);
  c.samples_per_context = j.value("samples_per_context", c.samples_per_context);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("response_mode")) c.response_mode = parse_mode(j["response_mode"].get<std::string>());
  c.max_response_len = j.value("max_response_len", c.max_response_len);
  if (j.contains("scorer_attribute_mode")) {
    c.scorer_attribute_mode = parse_mode(j["scorer_attribute_mode"].get<std::string>());
  }
  c.freeze_scorer = j.value("freeze_scorer", c.freeze_scorer);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  return c;
}

double ease_of_answering(std::span<const double> log_likelihoods,
                         std::span<const std::size_t> lengths) {
  if (log_likelihoods.empty()) throw ArgumentError("ease_of_answering: empty dull set");
  if (log_likelihoods.size() != lengths.size()) {
    throw ArgumentError("ease_of_answering: one length per dull reply is required");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0) throw ArgumentError("ease_of_answering: dull reply with no tokens");
    total += log_likelihoods[i] / static_cast<double>(lengths[i]);
  }
  return -total / static_cast<double>(lengths.size());
}

RewardResult ease_of_answering_reward(const DialogModel& generator, const DialogModel& scorer,
                                      std::span<const Utterance> context,
                                      std::span<const int> attributes, const RlConfig& config,
                                      Rng* rng) {
  if (config.dull.empty()) throw ArgumentError("ease_of_answering_reward: empty dull set");
  RewardResult result;
  {
    ad::Graph g;
    ContextState ctx =
        generator.encode_context(g, last_window(context, generator.config().context_window));
    ConditioningVector c = generator.build_conditioning(g, ctx, attributes);
    result.response =
        generator.generate(g, c, config.response_mode, config.max_response_len, rng);
    if (result.response.back() != Vocabulary::kEos) result.response.push_back(Vocabulary::kEos);
  }
  std::vector<Utterance> extended(context.begin(), context.end());
  extended.push_back(Utterance{result.response, std::vector<int>(attributes.begin(), attributes.end())});
  auto prefix = last_window(extended, scorer.config().context_window);
  const std::vector<int> next = scorer.choose_attributes(prefix, config.scorer_attribute_mode, rng);
  ad::Graph g;
  ContextState ctx = scorer.encode_context(g, prefix);
  ConditioningVector c = scorer.build_conditioning(g, ctx, next);
  for (const auto& s : config.dull.utterances) {
    result.log_likelihoods.push_back(-scorer.decode_utterance_nll(g, c, s).total_nll());
  }
  result.reward = ease_of_answering(result.log_likelihoods, config.dull.token_counts);
  return result;
}

RlState make_rl_state(const DialogModel& supervised, const RlConfig& config) {
  RlState s;
  s.adam.config.learning_rate = config.learning_rate;
  s.anchor = supervised.parameters().snapshot();
  return s;
}

nlohmann::json RlStepReport::to_json() const {
  return {{"step", step},
          {"mean_reward", mean_reward},
          {"baseline", baseline},
          {"anchor_distance", anchor_distance}};
}

std::vector<int> sample_attributes(const DialogModel& model, std::span<const Utterance> context,
                                   Rng& rng) {
  return model.choose_attributes(context, DecodeMode::Sample, &rng);
}

double accumulate_log_prob_gradient(DialogModel& model, std::span<const Utterance> context,
                                    std::span<const int> attributes, double scale) {
  ad::Graph g;
  ContextState ctx = model.encode_context(g, context);
  ad::Expr log_prob = model.attribute_log_prob(g, ctx, attributes);
  if (scale != 0.0) g.backward(log_prob, scale);
  return log_prob.value()[0];
}

RlStepReport reinforce_step(DialogModel& model,
                            std::span<const std::vector<Utterance>> contexts, RlState& state,
                            const RlConfig& config, const RewardFn& reward, Rng& rng) {
  config.validate();
  if (contexts.empty()) throw ArgumentError("reinforce_step: empty context batch");
  if (model.schema().empty()) throw ArgumentError("reinforce_step: model has no attributes");
  ParameterSet& params = model.parameters();
  if (state.anchor.size() != params.size()) {
    throw ArgumentError("reinforce_step: anchor does not match the model parameters");
  }
  struct Sample {
    std::span<const Utterance> context;
    std::vector<int> attributes;
    double reward;
  };
  std::vector<Sample> samples;
  double reward_sum = 0.0;
  for (const auto& full : contexts) {
    auto context = last_window(full, model.config().context_window);
    for (std::size_t s = 0; s < config.samples_per_context; ++s) {
      Sample sample{context, sample_attributes(model, context, rng), 0.0};
      sample.reward = reward(context, sample.attributes, rng);
      if (!std::isfinite(sample.reward)) {
        throw NumericError("reinforce_step: non-finite reward at step " +
                           std::to_string(state.step + 1));
      }
      reward_sum += sample.reward;
      samples.push_back(std::move(sample));
    }
  }
  const double n = static_cast<double>(samples.size());
  const double mean_reward = reward_sum / n;
  if (!state.baseline_ready) {
    state.baseline = mean_reward;
    state.baseline_ready = true;
  }

  params.zero_grad();
  for (const Sample& s : samples) {
    accumulate_log_prob_gradient(model, s.context, s.attributes, -(s.reward - state.baseline) / n);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params.tensor(i);
    auto grad = t.grad();
    if (!DialogModel::is_policy_parameter(params.name(i))) std::fill(grad.begin(), grad.end(), 0.0);
    if (config.anchor > 0.0) {
      auto value = t.values();
      auto anchor = state.anchor[i].values();
      for (std::size_t j = 0; j < value.size(); ++j) {
        grad[j] += 2.0 * config.anchor * (value[j] - anchor[j]);
      }
    }
  }
  state.adam.config.learning_rate = config.learning_rate;
  adam_step(params, state.adam);
  state.baseline =
      config.baseline_decay * state.baseline + (1.0 - config.baseline_decay) * mean_reward;
  ++state.step;

  RlStepReport report;
  report.step = state.step;
  report.mean_reward = mean_reward;
  report.baseline = state.baseline;
  report.anchor_distance = std::sqrt(squared_distance(params, state.anchor));
  return report;
}

RlResult rl_finetune(const std::vector<Dialog>& dialogs, const DialogModel& supervised,
                     const RlConfig& config,
                     const std::function<void(const RlStepReport&)>& on_step) {
  config.validate();
  if (config.dull.empty()) throw ArgumentError("rl_finetune: empty dull set");
  struct Ref {
    std::size_t dialog;
    std::size_t target;
  };
  std::vector<Ref> refs;
  for (std::size_t d = 0; d < dialogs.size(); ++d) {
    for (std::size_t m = 1; m < dialogs[d].size(); ++m) refs.push_back({d, m});
  }
  if (refs.empty()) throw ArgumentError("rl_finetune: corpus has no contexts");

  RlResult result{supervised.clone(), make_rl_state(supervised, config), {}};
  DialogModel& policy = result.model;
  std::optional<DialogModel> frozen;
  if (config.freeze_scorer) frozen.emplace(supervised.clone());
  const DialogModel& scorer = frozen ? *frozen : policy;
  RewardFn reward = [&](std::span<const Utterance> context, std::span<const int> attributes,
                        Rng& r) {
    return ease_of_answering_reward(policy, scorer, context, attributes, config, &r).reward;
  };

  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::vector<Utterance>> contexts;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Ref& ref = refs[pick(rng)];
      auto prefix = policy.context_prefix(dialogs[ref.dialog], ref.target);
      contexts.emplace_back(prefix.begin(), prefix.end());
    }
    RlStepReport report = reinforce_step(policy, contexts, result.state, config, reward, rng);
    result.report.push_back(report);
    if (on_step) on_step(report);
  }
  policy.parameters().zero_grad();
  return result;
}

}  // namespace attrdialog

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "attrdialog/error.hpp"
#include "attrdialog/gradcheck.hpp"
#include "attrdialog/rl.hpp"
#include "fixtures.hpp"

using namespace attrdialog;
using attrdialog::testing::flat_values;
using attrdialog::testing::single_family_schema;

namespace {

std::vector<double> flat_grads(const ParameterSet& params) {
  std::vector<double> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = const_cast<Tensor&>(params.tensor(i)).grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct PolicyFixture {
  Vocabulary vocab = attrdialog::testing::numbered_vocab(8);
  AttributeSchema schema = single_family_schema(4);
  DialogModel model{attrdialog::testing::tiny_config(12, single_family_schema(4))};
  std::vector<Utterance> context;

  PolicyFixture() {
    Rng rng(1);
    attrdialog::testing::scramble(model.parameters(), rng, 0.4);
    context = {{{4, 5, 3}, {1}}, {{6, 3}, {0}}};
  }
};

// Gradient of log P(a | context) over all parameters, on a fresh graph.
std::vector<double> log_prob_gradient(const DialogModel& m, std::span<const Utterance> context,
                                      int label) {
  DialogModel copy = m.clone();
  copy.parameters().zero_grad();
  const int a[] = {label};
  accumulate_log_prob_gradient(copy, context, a, 1.0);
  return flat_grads(copy.parameters());
}

RlConfig quiet_config() {
  RlConfig c;
  c.anchor = 0.0;
  c.batch_size = 1;
  return c;
}

}  // namespace

TEST(EaseOfAnswering, WorkedExample) {
  const double logps[] = {-4.0, -6.0};
  const std::size_t lengths[] = {2, 3};
  EXPECT_DOUBLE_EQ(ease_of_answering(logps, lengths), 2.0);
}

TEST(EaseOfAnswering, DuplicatingTheSetLeavesRewardUnchanged) {
  const double logps[] = {-1.3, -7.1, -2.2};
  const std::size_t lengths[] = {1, 4, 2};
  const double twice_logps[] = {-1.3, -7.1, -2.2, -1.3, -7.1, -2.2};
  const std::size_t twice_lengths[] = {1, 4, 2, 1, 4, 2};
  EXPECT_NEAR(ease_of_answering(logps, lengths), ease_of_answering(twice_logps, twice_lengths), 1e-15);
}

TEST(EaseOfAnswering, RejectsDegenerateInput) {
  const double logps[] = {-1.0};
  const std::size_t zero[] = {0};
  const std::size_t two[] = {1, 2};
  EXPECT_THROW(ease_of_answering(logps, zero), ArgumentError);
  EXPECT_THROW(ease_of_answering(logps, two), ArgumentError);
  EXPECT_THROW(ease_of_answering({}, {}), ArgumentError);
}

TEST(EaseOfAnswering, UniformScorerHandOracle) {
  // Every token, EOS included, has probability 1/|V|.
  ModelConfig c = attrdialog::testing::tiny_config(12, single_family_schema(4));
  c.zero_output_init = true;
  DialogModel m(c);
  Vocabulary vocab = attrdialog::testing::numbered_vocab(8);
  RlConfig config;
  config.dull = make_dull_set({"w0", "w1 w2"}, vocab);
  const std::vector<Utterance> context = {{{4, 3}, {0}}};
  const int attrs[] = {2};
  RewardResult r = ease_of_answering_reward(m, m, context, attrs, config);
  const double lv = std::log(12.0);
  EXPECT_NEAR(r.log_likelihoods[0], -2.0 * lv, 1e-12);
  EXPECT_NEAR(r.log_likelihoods[1], -3.0 * lv, 1e-12);
  EXPECT_NEAR(r.reward, (2.0 * lv + 1.5 * lv) / 2.0, 1e-12);
  EXPECT_EQ(r.response.back(), Vocabulary::kEos);
}

TEST(EaseOfAnswering, MatchesDirectScoring) {
  PolicyFixture s;
  RlConfig config;
  config.dull = make_dull_set({"w0 w1", "w3"}, s.vocab);
  const int attrs[] = {1};
  RewardResult r = ease_of_answering_reward(s.model, s.model, s.context, attrs, config);
  // Score the dull replies after the greedy response, directly.
  Dialog d;
  d.utterances = s.context;
  d.utterances.push_back({r.response, {1}});
  const auto next = s.model.choose_attributes(d.utterances, DecodeMode::Greedy);
  double total = 0.0;
  for (std::size_t i = 0; i < config.dull.size(); ++i) {
    Dialog probe = d;
    probe.utterances.push_back({config.dull.utterances[i], next});
    JointNll j = s.model.joint_nll(probe, probe.size() - 1);
    const double logp = -j.utterance_nll * static_cast<double>(j.tokens);
    EXPECT_NEAR(r.log_likelihoods[i], logp, 1e-10);
    total += logp / static_cast<double>(config.dull.token_counts[i]);
  }
  EXPECT_NEAR(r.reward, -total / 2.0, 1e-10);
}

TEST(Reinforce, LogProbGradientMatchesFiniteDifferences) {
  PolicyFixture s;
  const int a[] = {2};
  auto analytic = log_prob_gradient(s.model, s.context, 2);
  ParameterSet& params = s.model.parameters();
  std::size_t offset = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params.tensor(i).values();
    for (std::size_t j = 0; j < v.size(); j += 3) {
      const double saved = v[j];
      v[j] = saved + 1e-5;
      const double up = accumulate_log_prob_gradient(s.model, s.context, a, 0.0);
      v[j] = saved - 1e-5;
      const double down = accumulate_log_prob_gradient(s.model, s.context, a, 0.0);
      v[j] = saved;
      worst = std::max(worst, gradient_relative_error(analytic[offset + j], (up - down) / 2e-5));
    }
    offset += v.size();
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Reinforce, StepGradientIsAdvantageTimesScoreFunctionPlusAnchor) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  config.anchor = 0.05;
  RlState state = make_rl_state(s.model, config);
  Rng perturb(2);
  attrdialog::testing::scramble(s.model.parameters(), perturb, 0.4);
  state.baseline = 0.25;
  state.baseline_ready = true;
  const std::vector<double> theta = flat_values(s.model.parameters());
  std::vector<double> anchor;
  for (const auto& t : state.anchor) anchor.insert(anchor.end(), t.values().begin(), t.values().end());

  Rng rng(3), replay(3);
  const int sampled = sample_attributes(s.model, s.context, replay)[0];
  const auto score = log_prob_gradient(s.model, s.context, sampled);
  const std::vector<std::vector<Utterance>> contexts = {s.context};
  RewardFn reward = [](std::span<const Utterance>, std::span<const int>, Rng&) { return 1.75; };
  reinforce_step(s.model, contexts, state, config, reward, rng);

  const auto grads = flat_grads(s.model.parameters());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < s.model.parameters().size(); ++i) {
    const bool policy = DialogModel::is_policy_parameter(s.model.parameters().name(i));
    const std::size_t n = s.model.parameters().tensor(i).size();
    for (std::size_t j = offset; j < offset + n; ++j) {
      const double expected = (policy ? -(1.75 - 0.25) * score[j] : 0.0) +
                              2.0 * 0.05 * (theta[j] - anchor[j]);
      ASSERT_NEAR(grads[j], expected, 1e-12) << s.model.parameters().name(i);
    }
    offset += n;
  }
}

TEST(Reinforce, ConstantRewardWithoutAnchorChangesNothing) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  RlState state = make_rl_state(s.model, config);
  const auto before = flat_values(s.model.parameters());
  const std::vector<std::vector<Utterance>> contexts = {s.context, s.context};
  RewardFn reward = [](std::span<const Utterance>, std::span<const int>, Rng&) { return 3.0; };
  Rng rng(4);
  for (int i = 0; i < 5; ++i) reinforce_step(s.model, contexts, state, config, reward, rng);
  EXPECT_EQ(flat_values(s.model.parameters()), before);
  EXPECT_EQ(state.baseline, 3.0);
}

TEST(Reinforce, DecoderUntouchedWithoutAnchor) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  RlState state = make_rl_state(s.model, config);
  DialogModel original = s.model.clone();
  const std::vector<std::vector<Utterance>> contexts = {s.context};
  RewardFn reward = [](std::span<const Utterance>, std::span<const int> a, Rng&) {
    return a[0] == 1 ? 1.0 : 0.0;
  };
  Rng rng(5);
  for (int i = 0; i < 20; ++i) reinforce_step(s.model, contexts, state, config, reward, rng);
  bool policy_moved = false;
  for (std::size_t i = 0; i < s.model.parameters().size(); ++i) {
    const std::string& name = s.model.parameters().name(i);
    auto now = s.model.parameters().tensor(i).values();
    auto was = original.parameters().tensor(i).values();
    const bool same = std::equal(now.begin(), now.end(), was.begin());
    if (!DialogModel::is_policy_parameter(name)) EXPECT_TRUE(same) << name;
    policy_moved = policy_moved || !same;
  }
  EXPECT_TRUE(policy_moved);
}

TEST(Reinforce, AnchorPullsTowardSupervisedWeights) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  config.anchor = 0.5;
  config.learning_rate = 1e-3;
  RlState state = make_rl_state(s.model, config);
  const std::vector<Tensor> anchor_copy = state.anchor;
  Rng perturb(6);
  for (std::size_t i = 0; i < s.model.parameters().size(); ++i) {
    for (double& v : s.model.parameters().tensor(i).values()) v += uniform01(perturb) < 0.5 ? 0.1 : -0.1;
  }
  const std::vector<std::vector<Utterance>> contexts = {s.context};
  RewardFn reward = [](std::span<const Utterance>, std::span<const int>, Rng&) { return 0.0; };
  Rng rng(7);
  double previous = std::sqrt(squared_distance(s.model.parameters(), state.anchor));
  for (int i = 0; i < 40; ++i) {
    RlStepReport r = reinforce_step(s.model, contexts, state, config, reward, rng);
    EXPECT_LT(r.anchor_distance, previous) << "step " << i;
    previous = r.anchor_distance;
  }
  for (std::size_t i = 0; i < anchor_copy.size(); ++i) {
    EXPECT_TRUE(std::equal(anchor_copy[i].values().begin(), anchor_copy[i].values().end(),
                           state.anchor[i].values().begin()));
  }
}

TEST(Reinforce, BaselineFirstBatchThenMovingAverage) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  config.baseline_decay = 0.9;
  RlState state = make_rl_state(s.model, config);
  const std::vector<std::vector<Utterance>> contexts = {s.context};
  double value = 2.0;
  RewardFn reward = [&](std::span<const Utterance>, std::span<const int>, Rng&) { return value; };
  Rng rng(8);
  reinforce_step(s.model, contexts, state, config, reward, rng);
  EXPECT_DOUBLE_EQ(state.baseline, 2.0);
  value = 4.0;
  RlStepReport r = reinforce_step(s.model, contexts, state, config, reward, rng);
  EXPECT_DOUBLE_EQ(state.baseline, 0.9 * 2.0 + 0.1 * 4.0);
  EXPECT_DOUBLE_EQ(r.mean_reward, 4.0);
  EXPECT_EQ(r.step, 2u);
}

TEST(Reinforce, ScoreFunctionHasZeroMean) {
  // Σ_a P(a) ∇log P(a) = 0, so any baseline leaves the expected gradient
  // unchanged.
  PolicyFixture s;
  auto probs = s.model.predict_next_attributes(s.context)[0];
  std::vector<double> total;
  for (int a = 0; a < 4; ++a) {
    auto g = log_prob_gradient(s.model, s.context, a);
    if (total.empty()) total.assign(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) total[j] += probs[static_cast<std::size_t>(a)] * g[j];
  }
  EXPECT_LT(norm(total), 1e-12);
}

TEST(Reinforce, SampledEstimatorIsUnbiased) {
  PolicyFixture s;
  const std::vector<double> rewards = {0.3, -1.0, 2.0, 0.5};
  const double baseline = 0.7;
  auto probs = s.model.predict_next_attributes(s.context)[0];
  std::vector<std::vector<double>> grads;
  for (int a = 0; a < 4; ++a) grads.push_back(log_prob_gradient(s.model, s.context, a));
  std::vector<double> exact(grads[0].size(), 0.0);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t j = 0; j < exact.size(); ++j) {
      exact[j] += probs[a] * (rewards[a] - baseline) * grads[a][j];
    }
  }
  const int draws = 100000;
  std::map<int, int> counts;
  Rng rng(9);
  for (int i = 0; i < draws; ++i) ++counts[sample_attributes(s.model, s.context, rng)[0]];
  std::vector<double> estimate(exact.size(), 0.0);
  for (const auto& [a, n] : counts) {
    const double w = static_cast<double>(n) / draws * (rewards[static_cast<std::size_t>(a)] - baseline);
    for (std::size_t j = 0; j < exact.size(); ++j) estimate[j] += w * grads[static_cast<std::size_t>(a)][j];
  }
  std::vector<double> diff(exact.size());
  for (std::size_t j = 0; j < exact.size(); ++j) diff[j] = estimate[j] - exact[j];
  EXPECT_LT(norm(diff), 0.02 * norm(exact));
}

TEST(Reinforce, BanditConvergesToBestLabel) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  config.learning_rate = 1e-2;
  config.batch_size = 4;
  RlState state = make_rl_state(s.model, config);
  const std::vector<std::vector<Utterance>> contexts(4, s.context);
  RewardFn reward = [](std::span<const Utterance>, std::span<const int> a, Rng&) {
    return a[0] == 3 ? 1.0 : 0.0;
  };
  Rng rng(10);
  for (int i = 0; i < 300; ++i) reinforce_step(s.model, contexts, state, config, reward, rng);
  EXPECT_GE(s.model.predict_next_attributes(s.context)[0][3], 0.9);
}

TEST(Reinforce, RejectsBadInputs) {
  PolicyFixture s;
  RlConfig config = quiet_config();
  RlState state = make_rl_state(s.model, config);
  RewardFn reward = [](std::span<const Utterance>, std::span<const int>, Rng&) { return 0.0; };
  Rng rng(11);
  EXPECT_THROW(reinforce_step(s.model, {}, state, config, reward, rng), ArgumentError);
  RewardFn nan = [](std::span<const Utterance>, std::span<const int>, Rng&) { return std::nan(""); };
  const std::vector<std::vector<Utterance>> contexts = {s.context};
  EXPECT_THROW(reinforce_step(s.model, contexts, state, config, nan, rng), NumericError);
  config.baseline_decay = 1.5;
  EXPECT_THROW(reinforce_step(s.model, contexts, state, config, reward, rng), ArgumentError);
}

TEST(RlConfig, JsonRoundTrip) {
  RlConfig c;
  c.anchor = 0.2;
  c.response_mode = DecodeMode::Sample;
  c.freeze_scorer = true;
  c.steps = 17;
  EXPECT_EQ(RlConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(RlConfig::from_json({{"response_mode", "beam"}}), ArgumentError);
}

TEST(RlFinetune, LeavesSupervisedModelAndDecoderIntact) {
  PolicyFixture s;
  Rng rng(12);
  auto dialogs = attrdialog::testing::random_dialogs(5, 2, 4, 12, s.schema, rng);
  RlConfig config;
  config.dull = make_dull_set({"w0", "w1 w2"}, s.vocab);
  config.steps = 4;
  config.batch_size = 2;
  config.max_response_len = 4;
  const auto before = flat_values(s.model.parameters());
  std::size_t calls = 0;
  RlResult r = rl_finetune(dialogs, s.model, config, [&](const RlStepReport&) { ++calls; });
  EXPECT_EQ(calls, 4u);
  EXPECT_EQ(r.report.size(), 4u);
  EXPECT_EQ(flat_values(s.model.parameters()), before);
  for (std::size_t i = 0; i < r.model.parameters().size(); ++i) {
    const std::string& name = r.model.parameters().name(i);
    if (DialogModel::is_policy_parameter(name)) continue;
    auto now = r.model.parameters().tensor(i).values();
    auto was = s.model.parameters().tensor(i).values();
    EXPECT_TRUE(std::equal(now.begin(), now.end(), was.begin())) << name;
  }
  RlResult again = rl_finetune(dialogs, s.model, config);
  EXPECT_EQ(flat_values(again.model.parameters()), flat_values(r.model.parameters()));
  config.dull = DullSet{};
  EXPECT_THROW(rl_finetune(dialogs, s.model, config), ArgumentError);
}

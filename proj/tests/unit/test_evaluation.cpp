// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "attrdialog/error.hpp"
#include "attrdialog/evaluation.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace attrdialog;
using attrdialog::testing::brute_distinct;
using attrdialog::testing::brute_generic;

namespace {

std::vector<std::string> words(const std::string& s) { return tokenize(s); }

WordVectors plane_vectors() {
  WordVectors wv(2);
  wv.add("a", {1.0, 0.0});
  wv.add("b", {0.0, 1.0});
  wv.add("c", {1.0, 1.0});
  wv.add("d", {-2.0, 0.5});
  return wv;
}

}  // namespace

TEST(DistinctN, WorkedExamples) {
  const std::vector<std::vector<std::string>> dull = {words("i dont know"), words("i dont know")};
  EXPECT_DOUBLE_EQ(distinct_n(dull, 1), 0.5);
  const std::vector<std::vector<std::string>> ab = {words("a b c"), words("a b d")};
  EXPECT_DOUBLE_EQ(distinct_n(ab, 2), 0.75);
  const std::vector<std::vector<std::string>> unique = {words("p q r s")};
  EXPECT_DOUBLE_EQ(distinct_n(unique, 1), 1.0);
  const std::vector<std::vector<std::string>> shorty = {words("x")};
  EXPECT_DOUBLE_EQ(distinct_n(shorty, 2), 0.0);
  EXPECT_THROW(distinct_n(shorty, 0), ArgumentError);
}

TEST(DistinctN, MatchesBruteForceOnRandomInstances) {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> count(1, 6), len(0, 7), tok(0, 1 + trial % 9);
    std::vector<std::vector<int>> responses(static_cast<std::size_t>(count(rng)));
    for (auto& r : responses) {
      r.resize(static_cast<std::size_t>(len(rng)));
      for (int& t : r) t = tok(rng);
    }
    for (std::size_t n : {1u, 2u}) {
      ASSERT_EQ(distinct_n(responses, n), brute_distinct(responses, n)) << trial;
    }
  }
}

TEST(DistinctN, PermutationAndDuplicationProperties) {
  std::vector<std::vector<int>> r = {{1, 2, 3}, {4, 5}, {6}};
  double base = distinct_n(r, 1);
  std::reverse(r.begin(), r.end());
  EXPECT_EQ(distinct_n(r, 1), base);
  EXPECT_EQ(base, 1.0);
  auto doubled = r;
  doubled.insert(doubled.end(), r.begin(), r.end());
  EXPECT_DOUBLE_EQ(distinct_n(doubled, 1), 0.5);
}

TEST(GenericRate, Examples) {
  const std::vector<std::vector<int>> phrases = {{5, 6}, {7}};
  const std::vector<std::vector<int>> all_first = {{5, 6}, {5, 6}};
  EXPECT_EQ(generic_response_rate(all_first, phrases), (std::vector<double>{100.0, 0.0}));
  const std::vector<std::vector<int>> none = {{9}, {8, 7}};
  EXPECT_EQ(generic_response_rate(none, phrases), (std::vector<double>{0.0, 0.0}));
  const std::vector<std::vector<int>> prefix = {{5, 6, 8, 9}, {5}, {7, 5, 6}};
  auto rates = generic_response_rate(prefix, phrases);
  EXPECT_DOUBLE_EQ(rates[0], 100.0 / 3.0);
  EXPECT_DOUBLE_EQ(rates[1], 100.0 / 3.0);
  EXPECT_THROW(generic_response_rate(prefix, {}), ArgumentError);
}

TEST(GenericRate, MatchesBruteForceOnRandomInstances) {
  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> count(1, 8), len(0, 5), plen(1, 3), tok(4, 6);
    std::vector<std::vector<int>> responses(static_cast<std::size_t>(count(rng)));
    for (auto& r : responses) {
      r.resize(static_cast<std::size_t>(len(rng)));
      for (int& t : r) t = tok(rng);
    }
    std::vector<std::vector<int>> phrases(3);
    for (auto& p : phrases) {
      p.resize(static_cast<std::size_t>(plen(rng)));
      for (int& t : p) t = tok(rng);
    }
    auto rates = generic_response_rate(responses, phrases);
    ASSERT_EQ(rates, brute_generic(responses, phrases)) << trial;
    for (double v : rates) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
}

TEST(EmbeddingMetrics, IdenticalPairsScoreOne) {
  WordVectors wv = plane_vectors();
  auto s = words("a c d");
  EXPECT_NEAR(embedding_average(s, s, wv), 1.0, 1e-12);
  EXPECT_NEAR(embedding_greedy(s, s, wv), 1.0, 1e-12);
  EXPECT_NEAR(embedding_extrema(s, s, wv), 1.0, 1e-12);
}

TEST(EmbeddingMetrics, OrthogonalAverageIsZero) {
  WordVectors wv = plane_vectors();
  EXPECT_EQ(embedding_average(words("a a"), words("b"), wv), 0.0);
}

TEST(EmbeddingMetrics, HandComputedValues) {
  WordVectors wv = plane_vectors();
  const auto ref = words("a b");
  const auto hyp = words("c d");
  // cos(a,c) = 1/√2, cos(a,d) = -2/√4.25, cos(b,c) = 1/√2, cos(b,d) = 0.5/√4.25
  // cos(c,d) = -1.5/(√2·√4.25)
  const double r2 = std::sqrt(2.0), r425 = std::sqrt(4.25);
  const double ref_side = (1 / r2 + 1 / r2) / 2;
  const double hyp_side = (std::max(1 / r2, 1 / r2) + std::max(-2 / r425, 0.5 / r425)) / 2;
  EXPECT_NEAR(embedding_greedy(ref, hyp, wv), (ref_side + hyp_side) / 2, 1e-9);
  // Means: ref (0.5, 0.5); hyp (-0.5, 0.75).
  EXPECT_NEAR(embedding_average(ref, hyp, wv),
              (0.5 * -0.5 + 0.5 * 0.75) / (std::sqrt(0.5) * std::sqrt(0.8125)), 1e-9);
  // Extrema: ref (1, 1); hyp (-2, 1).
  EXPECT_NEAR(embedding_extrema(ref, hyp, wv), (-2.0 + 1.0) / (r2 * std::sqrt(5.0)), 1e-9);
}

TEST(EmbeddingMetrics, ExtremaTiesPreferPositive) {
  WordVectors wv(1);
  wv.add("p", {2.0});
  wv.add("n", {-2.0});
  wv.add("q", {1.0});
  EXPECT_NEAR(embedding_extrema(words("n p"), words("q"), wv), 1.0, 1e-12);
}

TEST(EmbeddingMetrics, UnknownFallbackAndEmptyError) {
  WordVectors wv = plane_vectors();
  EXPECT_THROW(embedding_average(words("zzz"), words("a"), wv), ArgumentError);
  wv.add("<unk>", {0.0, 1.0});
  EXPECT_NEAR(embedding_average(words("zzz"), words("b"), wv), 1.0, 1e-12);
}

TEST(EmbeddingMetrics, ScoresStayInRange) {
  Rng rng(3);
  WordVectors wv(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 6; ++i) wv.add("t" + std::to_string(i), {u(rng), u(rng), u(rng)});
  std::vector<TokenPair> pairs;
  std::uniform_int_distribution<int> pick(0, 5), len(1, 4);
  for (int p = 0; p < 50; ++p) {
    TokenPair pair;
    for (int i = len(rng); i > 0; --i) pair.first.push_back("t" + std::to_string(pick(rng)));
    for (int i = len(rng); i > 0; --i) pair.second.push_back("t" + std::to_string(pick(rng)));
    pairs.push_back(pair);
  }
  EmbeddingScores s = embedding_metrics(pairs, wv);
  for (double v : {s.average, s.greedy, s.extrema}) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(WordVectors, ParseValidatesDimensions) {
  WordVectors wv = WordVectors::parse("a 1 2\nb 3 4\n\n");
  EXPECT_EQ(wv.dim(), 2u);
  EXPECT_EQ(wv.size(), 2u);
  EXPECT_THROW(WordVectors::parse("a 1 2\nb 3\n"), FormatError);
  EXPECT_THROW(WordVectors::parse("a 1 x\n"), FormatError);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  ModelConfig c = attrdialog::testing::tiny_config(11, attrdialog::testing::single_family_schema(3));
  c.zero_output_init = true;
  DialogModel m(c);
  Rng rng(4);
  auto dialogs = attrdialog::testing::random_dialogs(6, 2, 5, 11, c.schema, rng);
  EXPECT_EQ(perplexity(m, dialogs), 11.0);
  EXPECT_EQ(perplexity(m, dialogs, true), 11.0);
  EXPECT_THROW(perplexity(m, std::vector<Dialog>{}), ArgumentError);
}

TEST(Perplexity, MatchesPerExampleAccumulationAndIgnoresOrder) {
  ModelConfig c = attrdialog::testing::tiny_config(11, attrdialog::testing::single_family_schema(3));
  DialogModel m(c);
  Rng rng(5);
  attrdialog::testing::scramble(m.parameters(), rng, 0.5);
  auto dialogs = attrdialog::testing::random_dialogs(8, 2, 5, 11, c.schema, rng);
  double nll = 0.0;
  double tokens = 0.0;
  for (const auto& d : dialogs) {
    for (std::size_t t = 1; t < d.size(); ++t) {
      JointNll j = m.joint_nll(d, t);
      nll += j.utterance_nll * static_cast<double>(j.tokens);
      tokens += static_cast<double>(j.tokens);
    }
  }
  const double ppl = perplexity(m, dialogs);
  EXPECT_NEAR(ppl, std::exp(nll / tokens), 1e-9);
  std::reverse(dialogs.begin(), dialogs.end());
  EXPECT_NEAR(perplexity(m, dialogs), ppl, 1e-9);
}

TEST(Generation, ResponsesAndReport) {
  ModelConfig c = attrdialog::testing::tiny_config(11, attrdialog::testing::single_family_schema(3));
  DialogModel m(c);
  Rng rng(6);
  auto dialogs = attrdialog::testing::random_dialogs(4, 3, 3, 11, c.schema, rng);
  GenerationOptions opt;
  opt.max_len = 4;
  auto out = generate_responses(m, dialogs, opt);
  EXPECT_EQ(out.size(), 8u);
  for (const auto& r : out) {
    EXPECT_LE(r.response.size(), 4u);
    EXPECT_TRUE(r.reference.empty() || r.reference.back() != Vocabulary::kEos);
  }
  opt.last_turn_only = true;
  EXPECT_EQ(generate_responses(m, dialogs, opt).size(), 4u);
  Vocabulary vocab = attrdialog::testing::numbered_vocab(7);
  auto report = evaluation_report(m, vocab, dialogs, nullptr, nullptr, opt);
  for (const char* key : {"perplexity", "distinct1", "distinct2", "emb_average", "emb_greedy", "emb_extrema"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
}

TEST(Perplexity, UniformModelExactAcrossVocabularySizes) {
  for (std::size_t v : {5u, 8u, 13u, 27u, 50u, 64u, 100u, 257u}) {
    ModelConfig c = attrdialog::testing::tiny_config(v, attrdialog::testing::single_family_schema(2));
    c.zero_output_init = true;
    DialogModel m(c);
    Rng rng(v);
    auto dialogs = attrdialog::testing::random_dialogs(20, 2, 6, v, c.schema, rng, 8);
    EXPECT_EQ(perplexity(m, dialogs), static_cast<double>(v)) << v;
  }
}

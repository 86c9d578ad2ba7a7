// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "attrdialog/corpus.hpp"
#include "attrdialog/error.hpp"
#include "fixtures.hpp"

using namespace attrdialog;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto path = std::filesystem::temp_directory_path() / ("attrdialog_corpus_" + name);
  std::ofstream(path) << content;
  return path;
}

AttributeSchema act_schema() {
  return AttributeSchema({AttributeFamily::make("act", {"question", "answer"}),
                          AttributeFamily::make("mood", {"pos", "neg"})});
}

}  // namespace

TEST(Vocabulary, ReservedIds) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("<pad>"), Vocabulary::kPad);
  EXPECT_EQ(v.id("<unk>"), Vocabulary::kUnk);
  EXPECT_EQ(v.id("<sos>"), Vocabulary::kSos);
  EXPECT_EQ(v.id("<eos>"), Vocabulary::kEos);
  EXPECT_EQ(v.id("never-seen"), Vocabulary::kUnk);
}

TEST(Vocabulary, FileRoundTripAndValidation) {
  Vocabulary v = attrdialog::testing::numbered_vocab(3);
  auto path = std::filesystem::temp_directory_path() / "attrdialog_vocab.txt";
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  EXPECT_THROW(Vocabulary::from_tokens({"<unk>", "<pad>", "<sos>", "<eos>"}), FormatError);
  EXPECT_THROW(Vocabulary::from_tokens({"<pad>", "<unk>", "<sos>", "<eos>", "a", "a"}),
               FormatError);
}

TEST(Vocabulary, TokenizeLowercasesAndSplitsOnWhitespace) {
  auto t = tokenize("  Hello\tWORLD \n again ");
  EXPECT_EQ(t, (std::vector<std::string>{"hello", "world", "again"}));
}

TEST(BuildVocab, KeepsMostFrequentWithinCap) {
  RawCorpus raw = parse_corpus(R"({"utterances":[{"text":"a a b"},{"text":"a"}]})");
  Vocabulary v = build_vocab(raw, 6);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_TRUE(v.find("a").has_value());
  EXPECT_TRUE(v.find("b").has_value());
  EXPECT_THROW(build_vocab(raw, 4), ArgumentError);
}

TEST(BuildVocab, TiesBreakLexicographically) {
  RawCorpus raw = parse_corpus(R"({"utterances":[{"text":"y x"},{"text":"z"}]})");
  Vocabulary v = build_vocab(raw, 5);
  EXPECT_TRUE(v.find("x").has_value());
  EXPECT_FALSE(v.find("y").has_value());
  EXPECT_EQ(encode_text("y", v)[0], Vocabulary::kUnk);
}

TEST(BuildVocab, MatchesFrequencyCountOracle) {
  Rng rng(5);
  std::uniform_int_distribution<int> word(0, 29);
  RawCorpus raw;
  for (int d = 0; d < 40; ++d) {
    RawDialog dialog;
    for (int u = 0; u < 3; ++u) {
      std::string text;
      for (int i = 0; i < 6; ++i) text += "t" + std::to_string(word(rng) * word(rng) % 23) + " ";
      dialog.utterances.push_back({text, {}});
    }
    raw.push_back(dialog);
  }
  std::map<std::string, int> counts;
  for (const auto& d : raw)
    for (const auto& u : d.utterances)
      for (const auto& t : tokenize(u.text)) ++counts[t];
  std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v = build_vocab(raw, 14);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    EXPECT_EQ(v.find(ranked[i].first).has_value(), i < 10) << ranked[i].first;
  }
  EXPECT_EQ(build_vocab(raw, 14), v);
}

TEST(Corpus, ParseReportsLineNumbers) {
  try {
    parse_corpus("{\"utterances\":[{\"text\":\"a\"},{\"text\":\"b\"}]}\n{bad json}\n");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_corpus(R"({"utterances":[{"text":"only one"}]})"), FormatError);
}

TEST(Corpus, MissingAttrsMapToUnknown) {
  RawCorpus raw = parse_corpus(R"({"utterances":[{"text":"hi"},{"text":"yo","attrs":{"act":"answer"}}]})");
  Vocabulary v = build_vocab(raw, 10);
  auto dialogs = encode_corpus(raw, act_schema(), v);
  EXPECT_EQ(dialogs[0].utterances[0].attributes, act_schema().unknown_assignment());
  EXPECT_EQ(dialogs[0].utterances[1].attributes[0], 1);
  EXPECT_EQ(dialogs[0].utterances[1].attributes[1], act_schema().family(1).unknown());
}

TEST(Corpus, UnknownFamilyOrLabelIsAnError) {
  Vocabulary v;
  EXPECT_THROW(encode_corpus(parse_corpus(R"({"utterances":[{"text":"a","attrs":{"tone":"x"}},{"text":"b"}]})"),
                             act_schema(), v),
               FormatError);
  EXPECT_THROW(encode_corpus(parse_corpus(R"({"utterances":[{"text":"a","attrs":{"act":"shout"}},{"text":"b"}]})"),
                             act_schema(), v),
               FormatError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  auto path = temp_file("in.jsonl",
                        R"({"utterances":[{"text":"how are you","attrs":{"act":"question","mood":"pos"}},{"text":"fine thanks","attrs":{"act":"answer"}}]})"
                        "\n");
  Vocabulary vocab;
  auto dialogs = load_corpus(path, act_schema(), 50, vocab);
  ASSERT_EQ(dialogs.size(), 1u);
  EXPECT_EQ(dialogs[0].utterances[0].tokens.back(), Vocabulary::kEos);
  auto out = std::filesystem::temp_directory_path() / "attrdialog_corpus_out.jsonl";
  save_corpus(out, dialogs, act_schema(), vocab);
  EXPECT_EQ(load_corpus(out, act_schema(), vocab), dialogs);
}

TEST(Corpus, UnseenTokenMapsToUnk) {
  Vocabulary v = attrdialog::testing::numbered_vocab(2);
  auto ids = encode_text("w0 zebra w1", v);
  EXPECT_EQ(ids, (std::vector<int>{v.id("w0"), Vocabulary::kUnk, v.id("w1"), Vocabulary::kEos}));
}

TEST(DullSet, CountsTokensKeepsDuplicatesSkipsBlanks) {
  Vocabulary v;
  for (const char* w : {"i", "dont", "know"}) v.add(w);
  auto path = temp_file("dull.txt", "i dont know\n\ni dont know\n");
  DullSet s = load_dull_set(path, v);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.token_counts[0], 3u);
  EXPECT_EQ(s.utterances[0].back(), Vocabulary::kEos);
  EXPECT_EQ(s.skipped_lines, (std::vector<std::size_t>{2}));
  auto empty = temp_file("empty.txt", "\n\n");
  EXPECT_THROW(load_dull_set(empty, v), FormatError);
  EXPECT_TRUE(load_dull_set(empty, v, false).empty());
}

TEST(Corpus, SplitIsDeterministicTail) {
  Rng rng(1);
  auto dialogs = attrdialog::testing::random_dialogs(20, 2, 3, 10, act_schema(), rng);
  auto [train, valid] = split_dialogs(dialogs, 0.1);
  EXPECT_EQ(train.size(), 18u);
  EXPECT_EQ(valid.size(), 2u);
  EXPECT_EQ(valid[1], dialogs[19]);
}

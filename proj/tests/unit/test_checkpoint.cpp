// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "attrdialog/adam.hpp"
#include "attrdialog/checkpoint.hpp"
#include "attrdialog/error.hpp"
#include "fixtures.hpp"

using namespace attrdialog;
using attrdialog::testing::flat_values;
using attrdialog::testing::single_family_schema;

namespace {

struct Fixture {
  Vocabulary vocab = attrdialog::testing::numbered_vocab(8);
  AttributeSchema schema = single_family_schema(3);
  DialogModel model{attrdialog::testing::tiny_config(12, single_family_schema(3))};
  std::vector<Dialog> dialogs;

  Fixture() {
    Rng rng(1);
    attrdialog::testing::scramble(model.parameters(), rng, 0.3);
    dialogs = attrdialog::testing::random_dialogs(3, 3, 4, 12, schema, rng);
  }
};

// Gives every parameter a gradient and takes one Adam step.
AdamState one_adam_step(DialogModel& m, const Dialog& d) {
  AdamState state;
  state.config.learning_rate = 1e-2;
  ad::Graph g;
  ContextState ctx = m.encode_context(g, std::span(d.utterances).first(1));
  ConditioningVector c = m.build_conditioning(g, ctx, d.utterances[1].attributes);
  ad::Expr loss = ad::add(m.attribute_nll(g, ctx, d.utterances[1].attributes).loss,
                          m.decode_utterance_nll(g, c, d.utterances[1].tokens).loss);
  m.parameters().zero_grad();
  g.backward(loss);
  adam_step(m.parameters(), state);
  return state;
}

std::string rewrite_header(const std::string& bytes, const auto& edit) {
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
  nlohmann::json header = nlohmann::json::parse(bytes.substr(8, len));
  edit(header);
  const std::string text = header.dump();
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((text.size() >> (8 * i)) & 0xff);
  return out + text + bytes.substr(8 + len);
}

}  // namespace

TEST(Checkpoint, SerializeParseSerializeIsByteIdentical) {
  Fixture f;
  const std::string bytes = serialize_checkpoint(make_checkpoint(f.model, f.vocab, nullptr, 5, 9));
  Checkpoint back = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.kind, kDialogModelKind);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.step, 9u);
  EXPECT_FALSE(back.adam.has_value());
}

TEST(Checkpoint, ReloadedModelScoresIdentically) {
  Fixture f;
  auto dir = std::filesystem::temp_directory_path() / "attrdialog_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(make_checkpoint(f.model, f.vocab), dir / "m.ckpt");
  DialogModel back = model_from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  EXPECT_EQ(flat_values(back.parameters()), flat_values(f.model.parameters()));
  EXPECT_EQ(back.config().to_json(), f.model.config().to_json());
  for (const auto& d : f.dialogs) {
    for (std::size_t t = 1; t < d.size(); ++t) {
      EXPECT_EQ(back.joint_nll(d, t).value(), f.model.joint_nll(d, t).value());
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, AdamStateRoundTripsAndResumesIdentically) {
  Fixture f;
  AdamState state = one_adam_step(f.model, f.dialogs[0]);
  Checkpoint ckpt = parse_checkpoint(serialize_checkpoint(make_checkpoint(f.model, f.vocab, &state)));
  ASSERT_TRUE(ckpt.adam.has_value());
  EXPECT_EQ(ckpt.adam->step, state.step);
  EXPECT_EQ(ckpt.adam->first_moment, state.first_moment);
  EXPECT_EQ(ckpt.adam->second_moment, state.second_moment);
  EXPECT_EQ(ckpt.adam->config.learning_rate, state.config.learning_rate);

  DialogModel resumed = model_from_checkpoint(ckpt);
  AdamState resumed_state = *ckpt.adam;
  // Continue both runs by one more step on the same data.
  auto step = [](DialogModel& m, AdamState& s, const Dialog& d) {
    ad::Graph g;
    ContextState ctx = m.encode_context(g, std::span(d.utterances).first(1));
    ConditioningVector c = m.build_conditioning(g, ctx, d.utterances[1].attributes);
    m.parameters().zero_grad();
    g.backward(m.decode_utterance_nll(g, c, d.utterances[1].tokens).loss);
    adam_step(m.parameters(), s);
  };
  step(f.model, state, f.dialogs[1]);
  step(resumed, resumed_state, f.dialogs[1]);
  EXPECT_EQ(flat_values(resumed.parameters()), flat_values(f.model.parameters()));
}

TEST(Checkpoint, ClassifierRoundTrip) {
  ClassifierConfig c;
  c.family = single_family_schema(3).family(0);
  c.vocab_size = 12;
  c.embed_dim = 3;
  c.hidden = 4;
  c.history_hidden = 3;
  c.label_dim = 2;
  c.mlp_hidden = 5;
  AttributeClassifier clf(c);
  Vocabulary vocab = attrdialog::testing::numbered_vocab(8);
  const std::string bytes = serialize_checkpoint(make_checkpoint(clf, vocab, 4));
  Checkpoint ckpt = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(ckpt), bytes);
  AttributeClassifier back = classifier_from_checkpoint(ckpt);
  const int t[] = {5, 6, Vocabulary::kEos};
  EXPECT_EQ(back.classify(t, {0, 3}), clf.classify(t, {0, 3}));
  EXPECT_THROW(model_from_checkpoint(ckpt), FormatError);
  Fixture f;
  EXPECT_THROW(classifier_from_checkpoint(make_checkpoint(f.model, f.vocab)), FormatError);
}

TEST(Checkpoint, RejectsVersionMismatch) {
  Fixture f;
  const std::string bytes = serialize_checkpoint(make_checkpoint(f.model, f.vocab));
  EXPECT_THROW(parse_checkpoint(rewrite_header(bytes, [](nlohmann::json& h) { h["format_version"] = 2; })),
               FormatError);
  EXPECT_NO_THROW(parse_checkpoint(rewrite_header(bytes, [](nlohmann::json&) {})));
}

TEST(Checkpoint, RejectsTruncatedOrPaddedPayload) {
  Fixture f;
  const std::string bytes = serialize_checkpoint(make_checkpoint(f.model, f.vocab));
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes + std::string(8, '\0')), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 5)), FormatError);
  EXPECT_THROW(parse_checkpoint(""), FormatError);
}

TEST(Checkpoint, RejectsParameterMismatch) {
  Fixture f;
  const Checkpoint good = make_checkpoint(f.model, f.vocab);

  Checkpoint missing = parse_checkpoint(serialize_checkpoint(good));
  missing.params.pop_back();
  EXPECT_THROW(model_from_checkpoint(missing), FormatError);

  Checkpoint surplus = parse_checkpoint(serialize_checkpoint(good));
  surplus.params.emplace_back("extra.weight", Tensor({1, 1}));
  EXPECT_THROW(model_from_checkpoint(surplus), FormatError);

  Checkpoint reshaped = parse_checkpoint(serialize_checkpoint(good));
  reshaped.params[0].second = Tensor({1, 2});
  EXPECT_THROW(model_from_checkpoint(reshaped), FormatError);

  Checkpoint duplicate = parse_checkpoint(serialize_checkpoint(good));
  duplicate.params[1].first = duplicate.params[0].first;
  EXPECT_THROW(model_from_checkpoint(duplicate), FormatError);

  Checkpoint vocab = parse_checkpoint(serialize_checkpoint(good));
  vocab.vocab = attrdialog::testing::numbered_vocab(3);
  EXPECT_THROW(model_from_checkpoint(vocab), FormatError);
}

TEST(Checkpoint, RejectsMismatchedDeclaredHiddenSize) {
  Fixture f;
  Checkpoint ckpt = make_checkpoint(f.model, f.vocab);
  ckpt.config["decoder_hidden"] = ckpt.config["decoder_hidden"].get<std::size_t>() + 1;
  EXPECT_THROW(model_from_checkpoint(ckpt), FormatError);
}

TEST(Checkpoint, MissingFileIsAnError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/none.ckpt"), Error);
}

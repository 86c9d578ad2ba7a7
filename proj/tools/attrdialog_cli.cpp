// SPDX-License-Identifier: Apache-2.0
// attrdialog-cli: synthesize and tag corpora, train, fine-tune, evaluate, chat.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attrdialog/checkpoint.hpp"
#include "attrdialog/corpus.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/error.hpp"
#include "attrdialog/evaluation.hpp"
#include "attrdialog/rl.hpp"
#include "attrdialog/synth.hpp"
#include "attrdialog/tagger.hpp"
#include "attrdialog/training.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace attrdialog;

constexpr std::size_t kDefaultVocabCap = 25000;

struct Flags {
  std::string corpus;
  std::string config;
  std::string checkpoint;
  std::vector<std::string> checkpoints;
  std::string out;
  std::uint64_t seed = 0;
  std::string dull_set;
  std::string word_vectors;
  std::string family;
  std::string variant = "uda";
  std::string mode = "greedy";
  std::size_t context_window = 0;  // 0 keeps the configured value
};

json read_json_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path sidecar(const std::string& out, const std::string& suffix) {
  return fs::path(out + suffix);
}

DecodeMode parse_mode(const std::string& text) {
  if (text == "greedy") return DecodeMode::Greedy;
  if (text == "sample") return DecodeMode::Sample;
  throw ArgumentError("mode must be greedy or sample, got " + text);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ArgumentError(std::string(flag) + " is required");
}

/// Families sorted by name, labels in sorted order.
AttributeSchema infer_schema(const RawCorpus& corpus) {
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& dialog : corpus) {
    for (const auto& u : dialog.utterances) {
      for (const auto& [family, label] : u.attrs) seen[family].insert(label);
    }
  }
  std::vector<AttributeFamily> families;
  for (auto& [name, labels] : seen) {
    families.push_back(AttributeFamily::make(name, {labels.begin(), labels.end()}));
  }
  return AttributeSchema(std::move(families));
}

AttributeSchema schema_for(const json& config, const RawCorpus& corpus) {
  if (config.contains("schema")) return AttributeSchema::from_json(config["schema"]);
  return infer_schema(corpus);
}

struct LoadedModel {
  Checkpoint ckpt;
  DialogModel model;
};

LoadedModel load_model(const std::string& path) {
  require(path, "--checkpoint");
  Checkpoint ckpt = load_checkpoint(path);
  DialogModel model = model_from_checkpoint(ckpt);
  return {std::move(ckpt), std::move(model)};
}

// ---------------------------------------------------------------------------

int cmd_synth(const Flags& f) {
  require(f.config, "--config");
  require(f.out, "--out");
  const json raw = read_json_file(f.config);
  const SynthSpec spec = SynthSpec::from_json(raw.contains("synth") ? raw["synth"] : raw);
  const SynthResult result = synthesize_corpus(spec, f.seed);
  write_corpus_file(f.out, result.corpus);

  json traces = json::array();
  for (const auto& t : result.traces) {
    traces.push_back({{"topic", t.topic}, {"labels", t.labels}, {"templates", t.templates}});
  }
  const json effective = {{"command", "synth"}, {"seed", f.seed}, {"spec", spec.to_json()}};
  write_json_file(sidecar(f.out, ".tables.json"),
                  {{"config", effective}, {"schema", spec.schema().to_json()}, {"traces", traces}});
  std::cout << json{{"dialogs", result.corpus.size()}, {"corpus", f.out}}.dump() << '\n';
  return 0;
}

int cmd_train_classifier(const Flags& f) {
  require(f.corpus, "--corpus");
  require(f.family, "--family");
  require(f.out, "--out");
  const json config = read_json_file(f.config);
  const RawCorpus raw = read_corpus_file(f.corpus);
  const AttributeSchema schema = schema_for(config, raw);
  const Vocabulary vocab = build_vocab(raw, config.value("vocab_cap", kDefaultVocabCap));
  const auto dialogs = encode_corpus(raw, schema, vocab);

  const auto k = schema.find(f.family);
  if (!k) throw ArgumentError("corpus has no attribute family \"" + f.family + "\"");
  ClassifierConfig cc = ClassifierConfig::from_json(config.value("classifier", json::object()));
  cc.variant = parse_variant(f.variant);
  cc.family = schema.family(*k);
  cc.vocab_size = vocab.size();
  cc.init_seed = f.seed;

  const json hj = config.value("train", json::object());
  ClassifierHyper hyper;
  hyper.epochs = hj.value("epochs", hyper.epochs);
  hyper.batch_size = hj.value("batch_size", hyper.batch_size);
  hyper.learning_rate = hj.value("learning_rate", hyper.learning_rate);
  hyper.validation_fraction = hj.value("validation_fraction", hyper.validation_fraction);
  hyper.patience = hj.value("patience", hyper.patience);
  hyper.seed = f.seed;

  ClassifierTraining trained = train_classifier(dialogs, schema, cc, hyper);
  const json effective = {
      {"command", "train-classifier"},
      {"corpus", f.corpus},
      {"seed", f.seed},
      {"vocab_cap", config.value("vocab_cap", kDefaultVocabCap)},
      {"classifier", cc.to_json()},
      {"train",
       {{"epochs", hyper.epochs},
        {"batch_size", hyper.batch_size},
        {"learning_rate", hyper.learning_rate},
        {"validation_fraction", hyper.validation_fraction},
        {"patience", hyper.patience}}}};
  const json summary = {{"validation_accuracy", trained.validation_accuracy},
                        {"majority_accuracy", trained.majority_accuracy},
                        {"epoch_accuracy", trained.epoch_accuracy}};
  Checkpoint ckpt = make_checkpoint(trained.model, vocab, f.seed);
  ckpt.metadata = {{"config", effective}, {"summary", summary}};
  save_checkpoint(ckpt, f.out);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_tag(const Flags& f) {
  require(f.corpus, "--corpus");
  require(f.out, "--out");
  if (f.checkpoints.empty()) throw ArgumentError("--checkpoint is required");
  RawCorpus raw = read_corpus_file(f.corpus);

  std::vector<AttributeClassifier> classifiers;
  std::optional<Vocabulary> vocab;
  for (const auto& path : f.checkpoints) {
    Checkpoint ckpt = load_checkpoint(path);
    if (vocab && !(*vocab == ckpt.vocab)) {
      throw ArgumentError("classifier checkpoints must share one vocabulary: " + path);
    }
    vocab = ckpt.vocab;
    classifiers.push_back(classifier_from_checkpoint(ckpt));
  }

  // Tagged families take the classifier's label set; gold labels must fit it.
  std::vector<AttributeFamily> families = infer_schema(raw).families();
  for (const auto& c : classifiers) {
    const AttributeFamily& tagged = c.family();
    auto it = std::find_if(families.begin(), families.end(),
                           [&](const AttributeFamily& fam) { return fam.name == tagged.name; });
    if (it == families.end()) {
      families.push_back(tagged);
      continue;
    }
    for (const auto& label : it->labels) {
      if (!tagged.find(label)) {
        throw FormatError("corpus label \"" + label + "\" is not known to the " + tagged.name +
                          " classifier");
      }
    }
    *it = tagged;
  }
  const AttributeSchema schema(families);
  const auto dialogs = encode_corpus(raw, schema, *vocab);
  std::vector<const AttributeClassifier*> pointers;
  for (const auto& c : classifiers) pointers.push_back(&c);
  const auto tagged = annotate_corpus(dialogs, schema, pointers);

  // Copy labels back so the original text survives vocabulary truncation.
  for (std::size_t d = 0; d < raw.size(); ++d) {
    for (std::size_t t = 0; t < raw[d].utterances.size(); ++t) {
      const auto& attrs = tagged[d].utterances[t].attributes;
      for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& fam = schema.family(k);
        if (attrs[k] != fam.unknown()) {
          raw[d].utterances[t].attrs[fam.name] = fam.labels[static_cast<std::size_t>(attrs[k])];
        }
      }
    }
  }
  write_corpus_file(f.out, raw);
  write_json_file(sidecar(f.out, ".meta.json"),
                  {{"config",
                    {{"command", "tag"},
                     {"corpus", f.corpus},
                     {"checkpoints", f.checkpoints},
                     {"seed", f.seed},
                     {"schema", schema.to_json()}}}});
  std::cout << json{{"dialogs", raw.size()}, {"corpus", f.out}}.dump() << '\n';
  return 0;
}

int cmd_train(const Flags& f) {
  require(f.corpus, "--corpus");
  require(f.out, "--out");
  const json config = read_json_file(f.config);
  const RawCorpus raw = read_corpus_file(f.corpus);
  const std::size_t cap = config.value("vocab_cap", kDefaultVocabCap);
  const Vocabulary vocab = build_vocab(raw, cap);
  ModelConfig mc = ModelConfig::from_json(config.value("model", json::object()));
  mc.schema = schema_for(config, raw);
  mc.vocab_size = vocab.size();
  mc.init_seed = f.seed;
  if (f.context_window > 0) mc.context_window = f.context_window;
  TrainHyper hyper = TrainHyper::from_json(config.value("train", json::object()));
  hyper.seed = f.seed;
  const auto dialogs = encode_corpus(raw, mc.schema, vocab);

  const json effective = {{"command", "train"}, {"corpus", f.corpus}, {"seed", f.seed},
                          {"vocab_cap", cap},   {"model", mc.to_json()},
                          {"train", hyper.to_json()}};
  std::ofstream log(sidecar(f.out, ".log.jsonl"), std::ios::binary);
  if (!log) throw Error("cannot write training log for " + f.out);
  log << json{{"config", effective}}.dump() << '\n';
  TrainResult result = train_mle(dialogs, mc, hyper, [&](const EpochLog& e) {
    log << e.to_json().dump() << '\n';
    log.flush();
    std::cerr << e.to_json().dump() << '\n';
  });

  Checkpoint ckpt = make_checkpoint(result.model, vocab, &result.adam, f.seed, result.step);
  ckpt.metadata = {{"config", effective},
                   {"best_epoch", result.best_epoch},
                   {"best_valid_ppl", result.best_valid_ppl}};
  save_checkpoint(ckpt, f.out);
  std::cout << json{{"best_epoch", result.best_epoch},
                    {"best_valid_ppl", result.best_valid_ppl},
                    {"steps", result.step}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_rl_finetune(const Flags& f) {
  require(f.corpus, "--corpus");
  require(f.dull_set, "--dull-set");
  require(f.out, "--out");
  const json config = read_json_file(f.config);
  LoadedModel loaded = load_model(f.checkpoint);
  const auto& schema = loaded.model.schema();
  const auto dialogs = encode_corpus(read_corpus_file(f.corpus), schema, loaded.ckpt.vocab);
  RlConfig rl = RlConfig::from_json(config.value("rl", json::object()));
  rl.dull = load_dull_set(f.dull_set, loaded.ckpt.vocab);
  rl.seed = f.seed;
  rl.response_mode = parse_mode(f.mode);

  const json effective = {{"command", "rl-finetune"}, {"corpus", f.corpus},
                          {"checkpoint", f.checkpoint}, {"dull_set", f.dull_set},
                          {"seed", f.seed},           {"rl", rl.to_json()}};
  std::ofstream report(sidecar(f.out, ".rl.jsonl"), std::ios::binary);
  if (!report) throw Error("cannot write RL report for " + f.out);
  report << json{{"config", effective}}.dump() << '\n';
  RlResult result = rl_finetune(dialogs, loaded.model, rl, [&](const RlStepReport& r) {
    report << r.to_json().dump() << '\n';
  });

  Checkpoint ckpt = make_checkpoint(result.model, loaded.ckpt.vocab, &result.state.adam, f.seed,
                                    result.state.step);
  ckpt.metadata = {{"config", effective}, {"parent", loaded.ckpt.metadata}};
  save_checkpoint(ckpt, f.out);
  const auto& last = result.report.back();
  std::cout << json{{"steps", result.state.step},
                    {"mean_reward", last.mean_reward},
                    {"baseline", last.baseline},
                    {"anchor_distance", last.anchor_distance}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_eval(const Flags& f) {
  require(f.corpus, "--corpus");
  const json config = read_json_file(f.config);
  LoadedModel loaded = load_model(f.checkpoint);
  const Vocabulary& vocab = loaded.ckpt.vocab;
  const auto split = encode_corpus(read_corpus_file(f.corpus), loaded.model.schema(), vocab);

  const json ej = config.value("eval", json::object());
  GenerationOptions opt;
  opt.token_mode = parse_mode(f.mode);
  opt.max_len = ej.value("max_len", opt.max_len);
  opt.max_examples = ej.value("max_examples", opt.max_examples);
  opt.last_turn_only = ej.value("last_turn_only", opt.last_turn_only);

  std::optional<WordVectors> vectors;
  if (!f.word_vectors.empty()) vectors = WordVectors::load(f.word_vectors);
  std::optional<DullSet> dull;
  if (!f.dull_set.empty()) dull = load_dull_set(f.dull_set, vocab);

  Rng rng(f.seed);
  json report = evaluation_report(loaded.model, vocab, split, vectors ? &*vectors : nullptr,
                                  dull ? &*dull : nullptr, opt, &rng);
  report["config"] = {{"command", "eval"},
                      {"corpus", f.corpus},
                      {"checkpoint", f.checkpoint},
                      {"word_vectors", f.word_vectors},
                      {"dull_set", f.dull_set},
                      {"seed", f.seed},
                      {"mode", f.mode},
                      {"eval",
                       {{"max_len", opt.max_len},
                        {"max_examples", opt.max_examples},
                        {"last_turn_only", opt.last_turn_only}}}};
  if (f.out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json_file(f.out, report);
  }
  return 0;
}

std::string describe(const AttributeSchema& schema, const std::vector<int>& assignment) {
  std::string text;
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (!text.empty()) text += ' ';
    text += schema.family(k).name + '=' +
            schema.family(k).labels[static_cast<std::size_t>(assignment[k])];
  }
  return text.empty() ? "(none)" : text;
}

int cmd_chat(const Flags& f) {
  LoadedModel loaded = load_model(f.checkpoint);
  const DialogModel& model = loaded.model;
  const Vocabulary& vocab = loaded.ckpt.vocab;
  const AttributeSchema& schema = model.schema();
  const DecodeMode mode = parse_mode(f.mode);
  const std::size_t window = f.context_window > 0 ? f.context_window : model.config().context_window;
  Rng rng(f.seed);

  std::vector<Utterance> history;
  std::map<std::size_t, int> overrides;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line == "/quit") break;
    if (line == "/reset") {
      history.clear();
      overrides.clear();
      std::cout << "history cleared\n";
      continue;
    }
    if (line.rfind("/set", 0) == 0) {
      std::istringstream words(line.substr(4));
      std::string family, label;
      words >> family >> label;
      const auto k = schema.find(family);
      const auto id = k ? schema.family(*k).find(label) : std::nullopt;
      if (!k || !id || *id == schema.family(*k).unknown()) {
        std::cout << "usage: /set <family> <label>; no such family or label\n";
        continue;
      }
      overrides[*k] = *id;
      std::cout << "next reply uses " << family << '=' << label << '\n';
      continue;
    }
    history.push_back({encode_text(line, vocab), schema.unknown_assignment()});
    const std::size_t start = history.size() > window ? history.size() - window : 0;
    const std::span<const Utterance> prefix(history.data() + start, history.size() - start);
    std::vector<int> assignment = model.choose_attributes(prefix, mode, &rng);
    std::cout << "predicted: " << describe(schema, assignment) << '\n';
    for (auto [k, id] : overrides) assignment[k] = id;
    overrides.clear();
    std::vector<int> reply = model.respond(prefix, assignment, mode, 20, &rng);
    std::cout << "reply [" << describe(schema, assignment) << "]: " << decode_tokens(reply, vocab)
              << '\n';
    if (reply.empty() || reply.back() != Vocabulary::kEos) reply.push_back(Vocabulary::kEos);
    history.push_back({std::move(reply), assignment});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-conditional dialog generation toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto seed = [&](CLI::App* sub) {
    sub->add_option("--seed", f.seed, "seed for every random draw")->capture_default_str();
  };
  auto mode = [&](CLI::App* sub) {
    sub->add_option("--mode", f.mode, "decoding: greedy or sample")
        ->check(CLI::IsMember({"greedy", "sample"}))
        ->capture_default_str();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus from a generator spec");
  synth->add_option("--config", f.config, "generator spec (JSON)")->required();
  synth->add_option("--out", f.out, "output corpus (JSONL)")->required();
  seed(synth);

  auto* tc = app.add_subcommand("train-classifier", "train an attribute classifier");
  tc->add_option("--corpus", f.corpus)->required();
  tc->add_option("--family", f.family, "attribute family to predict")->required();
  tc->add_option("--variant", f.variant, "classifier inputs")
      ->check(CLI::IsMember({"u", "da", "uda"}, CLI::ignore_case))
      ->capture_default_str();
  tc->add_option("--config", f.config);
  tc->add_option("--out", f.out, "classifier checkpoint")->required();
  seed(tc);

  auto* tag = app.add_subcommand("tag", "fill unknown labels with classifier predictions");
  tag->add_option("--corpus", f.corpus)->required();
  tag->add_option("--checkpoint", f.checkpoints, "classifier checkpoint, repeatable")->required();
  tag->add_option("--out", f.out, "annotated corpus (JSONL)")->required();
  seed(tag);

  auto* train = app.add_subcommand("train", "supervised training of the dialog model");
  train->add_option("--corpus", f.corpus)->required();
  train->add_option("--config", f.config);
  train->add_option("--out", f.out, "model checkpoint")->required();
  train->add_option("--context-window", f.context_window, "utterances of context");
  seed(train);

  auto* rl = app.add_subcommand("rl-finetune", "policy-gradient fine-tuning of attribute choice");
  rl->add_option("--checkpoint", f.checkpoint)->required();
  rl->add_option("--corpus", f.corpus, "dialogs to draw contexts from")->required();
  rl->add_option("--dull-set", f.dull_set, "one dull reply per line")->required();
  rl->add_option("--config", f.config);
  rl->add_option("--out", f.out, "fine-tuned checkpoint")->required();
  mode(rl);
  seed(rl);

  auto* ev = app.add_subcommand("eval", "perplexity, diversity and embedding metrics");
  ev->add_option("--checkpoint", f.checkpoint)->required();
  ev->add_option("--corpus", f.corpus, "evaluation split")->required();
  ev->add_option("--word-vectors", f.word_vectors);
  ev->add_option("--dull-set", f.dull_set);
  ev->add_option("--config", f.config);
  ev->add_option("--out", f.out, "metrics JSON; stdout when omitted");
  mode(ev);
  seed(ev);

  auto* chat = app.add_subcommand("chat", "interactive loop; /set <family> <label>, /reset, /quit");
  chat->add_option("--checkpoint", f.checkpoint)->required();
  chat->add_option("--context-window", f.context_window, "utterances of context");
  mode(chat);
  seed(chat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::transform(f.variant.begin(), f.variant.end(), f.variant.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (*synth) return cmd_synth(f);
    if (*tc) return cmd_train_classifier(f);
    if (*tag) return cmd_tag(f);
    if (*train) return cmd_train(f);
    if (*rl) return cmd_rl_finetune(f);
    if (*ev) return cmd_eval(f);
    if (*chat) return cmd_chat(f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

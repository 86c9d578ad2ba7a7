// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "attrdialog/error.hpp"

namespace attrdialog {

AttributeFamily AttributeFamily::make(std::string name, std::vector<std::string> labels) {
  if (name.empty()) throw ArgumentError("attribute family name must not be empty");
  AttributeFamily family;
  family.name = std::move(name);
  for (auto& label : labels) {
    if (label == kUnknownLabel) continue;
    if (std::find(family.labels.begin(), family.labels.end(), label) != family.labels.end()) {
      throw ArgumentError("duplicate label \"" + label + "\" in family " + family.name);
    }
    family.labels.push_back(std::move(label));
  }
  family.labels.emplace_back(kUnknownLabel);
  return family;
}

std::optional<int> AttributeFamily::find(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) return std::nullopt;
  return static_cast<int>(it - labels.begin());
}

AttributeSchema::AttributeSchema(std::vector<AttributeFamily> families)
    : families_(std::move(families)) {
  for (std::size_t i = 0; i < families_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (families_[i].name == families_[j].name) {
        throw ArgumentError("duplicate attribute family " + families_[i].name);
      }
    }
    if (families_[i].labels.empty() || families_[i].labels.back() != kUnknownLabel) {
      families_[i] = AttributeFamily::make(families_[i].name, families_[i].labels);
    }
  }
}

std::optional<std::size_t> AttributeSchema::find(const std::string& name) const {
  for (std::size_t k = 0; k < families_.size(); ++k) {
    if (families_[k].name == name) return k;
  }
  return std::nullopt;
}

std::vector<int> AttributeSchema::unknown_assignment() const {
  std::vector<int> out;
  for (const auto& f : families_) out.push_back(f.unknown());
  return out;
}

void AttributeSchema::validate(const std::vector<int>& assignment) const {
  if (assignment.size() != families_.size()) {
    throw ArgumentError("attribute assignment has " + std::to_string(assignment.size()) +
                        " labels for " + std::to_string(families_.size()) + " families");
  }
  for (std::size_t k = 0; k < families_.size(); ++k) {
    if (assignment[k] < 0 ||
        static_cast<std::size_t>(assignment[k]) >= families_[k].label_count()) {
      throw ArgumentError("label id " + std::to_string(assignment[k]) +
                          " invalid for family " + families_[k].name);
    }
  }
}

nlohmann::json AttributeSchema::to_json() const {
  nlohmann::json families = nlohmann::json::array();
  for (const auto& f : families_) {
    std::vector<std::string> known(f.labels.begin(), f.labels.end() - 1);
    families.push_back({{"name", f.name}, {"labels", known}});
  }
  return families;
}

AttributeSchema AttributeSchema::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("attribute schema must be a JSON array");
  std::vector<AttributeFamily> families;
  for (const auto& f : j) {
    families.push_back(AttributeFamily::make(f.at("name").get<std::string>(),
                                             f.at("labels").get<std::vector<std::string>>()));
  }
  return AttributeSchema(std::move(families));
}

bool AttributeSchema::operator==(const AttributeSchema& other) const {
  if (families_.size() != other.families_.size()) return false;
  for (std::size_t k = 0; k < families_.size(); ++k) {
    if (families_[k].name != other.families_[k].name ||
        families_[k].labels != other.families_[k].labels) {
      return false;
    }
  }
  return true;
}

namespace {

RawDialog parse_dialog_line(const std::string& line, std::size_t line_number) {
  auto fail = [&](const std::string& why) {
    return FormatError("corpus line " + std::to_string(line_number) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("invalid JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("utterances") || !j["utterances"].is_array()) {
    throw fail("expected an object with an \"utterances\" array");
  }
  RawDialog dialog;
  for (const auto& u : j["utterances"]) {
    if (!u.is_object() || !u.contains("text") || !u["text"].is_string()) {
      throw fail("every utterance needs a string \"text\" field");
    }
    RawUtterance utterance;
    utterance.text = u["text"].get<std::string>();
    if (u.contains("attrs")) {
      if (!u["attrs"].is_object()) throw fail("\"attrs\" must be an object");
      for (const auto& [family, label] : u["attrs"].items()) {
        if (!label.is_string()) throw fail("attribute \"" + family + "\" must be a string");
        utterance.attrs[family] = label.get<std::string>();
      }
    }
    dialog.utterances.push_back(std::move(utterance));
  }
  if (dialog.utterances.size() < 2) throw fail("a dialog needs at least two utterances");
  return dialog;
}

}  // namespace

RawCorpus parse_corpus(const std::string& text) {
  RawCorpus corpus;
  std::istringstream in(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    corpus.push_back(parse_dialog_line(line, line_number));
  }
  return corpus;
}

RawCorpus read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str());
}

std::string format_corpus(const RawCorpus& corpus) {
  std::string out;
  for (const auto& dialog : corpus) {
    nlohmann::json utterances = nlohmann::json::array();
    for (const auto& u : dialog.utterances) {
      nlohmann::json record = {{"text", u.text}};
      if (!u.attrs.empty()) record["attrs"] = u.attrs;
      utterances.push_back(std::move(record));
    }
    out += nlohmann::json{{"utterances", std::move(utterances)}}.dump();
    out += '\n';
  }
  return out;
}

void write_corpus_file(const std::filesystem::path& path, const RawCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus " + path.string());
  out << format_corpus(corpus);
}

Vocabulary build_vocab(const RawCorpus& corpus, std::size_t cap) {
  if (cap < Vocabulary::kReserved + 1) {
    throw ArgumentError("vocabulary cap must be at least 5, got " + std::to_string(cap));
  }
  if (corpus.empty()) throw ArgumentError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& dialog : corpus) {
    for (const auto& u : dialog.utterances) {
      for (auto& token : tokenize(u.text)) ++counts[token];
    }
  }
  const Vocabulary specials;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (specials.find(token)) continue;
    ranked.emplace_back(token, count);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  const std::size_t room = cap - Vocabulary::kReserved;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) vocab.add(ranked[i].first);
  return vocab;
}

std::vector<int> encode_text(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& token : tokenize(text)) ids.push_back(vocab.id(token));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string decode_tokens(const std::vector<int>& tokens, const Vocabulary& vocab) {
  std::string out;
  for (int id : tokens) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

std::vector<Dialog> encode_corpus(const RawCorpus& corpus, const AttributeSchema& schema,
                                  const Vocabulary& vocab) {
  std::vector<Dialog> dialogs;
  dialogs.reserve(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    Dialog dialog;
    for (const auto& u : corpus[d].utterances) {
      Utterance utterance;
      utterance.tokens = encode_text(u.text, vocab);
      utterance.attributes = schema.unknown_assignment();
      for (const auto& [family, label] : u.attrs) {
        auto k = schema.find(family);
        if (!k) {
          throw FormatError("dialog " + std::to_string(d + 1) +
                            ": unknown attribute family \"" + family + "\"");
        }
        auto id = schema.family(*k).find(label);
        if (!id) {
          throw FormatError("dialog " + std::to_string(d + 1) + ": unknown label \"" +
                            label + "\" for family \"" + family + "\"");
        }
        utterance.attributes[*k] = *id;
      }
      dialog.utterances.push_back(std::move(utterance));
    }
    dialogs.push_back(std::move(dialog));
  }
  return dialogs;
}

RawCorpus decode_corpus(const std::vector<Dialog>& dialogs, const AttributeSchema& schema,
                        const Vocabulary& vocab) {
  RawCorpus corpus;
  for (const auto& dialog : dialogs) {
    RawDialog raw;
    for (const auto& u : dialog.utterances) {
      RawUtterance ru;
      ru.text = decode_tokens(u.tokens, vocab);
      schema.validate(u.attributes);
      for (std::size_t k = 0; k < schema.size(); ++k) {
        const auto& family = schema.family(k);
        if (u.attributes[k] == family.unknown()) continue;
        ru.attrs[family.name] = family.labels[static_cast<std::size_t>(u.attributes[k])];
      }
      raw.utterances.push_back(std::move(ru));
    }
    corpus.push_back(std::move(raw));
  }
  return corpus;
}

std::vector<Dialog> load_corpus(const std::filesystem::path& path,
                                const AttributeSchema& schema, const Vocabulary& vocab) {
  return encode_corpus(read_corpus_file(path), schema, vocab);
}

std::vector<Dialog> load_corpus(const std::filesystem::path& path,
                                const AttributeSchema& schema, std::size_t cap,
                                Vocabulary& vocab_out) {
  RawCorpus raw = read_corpus_file(path);
  vocab_out = build_vocab(raw, cap);
  return encode_corpus(raw, schema, vocab_out);
}

void save_corpus(const std::filesystem::path& path, const std::vector<Dialog>& dialogs,
                 const AttributeSchema& schema, const Vocabulary& vocab) {
  write_corpus_file(path, decode_corpus(dialogs, schema, vocab));
}

DullSet make_dull_set(const std::vector<std::string>& lines, const Vocabulary& vocab) {
  DullSet set;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<int> ids = encode_text(lines[i], vocab);
    if (ids.size() == 1) {
      set.skipped_lines.push_back(i + 1);
      continue;
    }
    set.token_counts.push_back(ids.size() - 1);
    set.utterances.push_back(std::move(ids));
  }
  return set;
}

DullSet load_dull_set(const std::filesystem::path& path, const Vocabulary& vocab,
                      bool require_nonempty) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read dull set " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  DullSet set = make_dull_set(lines, vocab);
  if (require_nonempty && set.empty()) {
    throw FormatError("dull set " + path.string() + " contains no utterances");
  }
  return set;
}

std::pair<std::vector<Dialog>, std::vector<Dialog>> split_dialogs(
    const std::vector<Dialog>& dialogs, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ArgumentError("split fraction must lie in [0, 1)");
  }
  std::size_t held = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(dialogs.size())));
  if (fraction > 0.0 && held == 0 && dialogs.size() > 1) held = 1;
  const std::size_t keep = dialogs.size() - held;
  return {std::vector<Dialog>(dialogs.begin(), dialogs.begin() + static_cast<long>(keep)),
          std::vector<Dialog>(dialogs.begin() + static_cast<long>(keep), dialogs.end())};
}

}  // namespace attrdialog

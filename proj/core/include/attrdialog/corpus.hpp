// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/vocabulary.hpp"

namespace attrdialog {

inline constexpr const char* kUnknownLabel = "unknown";

/// One discrete attribute family. The sentinel "unknown" label is always
/// present and always last, so known labels occupy ids [0, known_count()).
struct AttributeFamily {
  std::string name;
  std::vector<std::string> labels;

  static AttributeFamily make(std::string name, std::vector<std::string> labels);

  int unknown() const { return static_cast<int>(labels.size()) - 1; }
  std::size_t label_count() const { return labels.size(); }
  std::size_t known_count() const { return labels.size() - 1; }
  std::optional<int> find(const std::string& label) const;
};

class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<AttributeFamily> families);

  std::size_t size() const { return families_.size(); }
  bool empty() const { return families_.empty(); }
  const AttributeFamily& family(std::size_t k) const { return families_[k]; }
  const std::vector<AttributeFamily>& families() const { return families_; }
  std::optional<std::size_t> find(const std::string& name) const;
  /// All-"unknown" assignment.
  std::vector<int> unknown_assignment() const;
  /// Throws if `assignment` has the wrong arity or an out-of-range label.
  void validate(const std::vector<int>& assignment) const;

  nlohmann::json to_json() const;
  static AttributeSchema from_json(const nlohmann::json& j);

  bool operator==(const AttributeSchema& other) const;

 private:
  std::vector<AttributeFamily> families_;
};

struct Utterance {
  std::vector<int> tokens;      ///< EOS-terminated, no interior PAD
  std::vector<int> attributes;  ///< one label id per schema family

  bool operator==(const Utterance&) const = default;
};

struct Dialog {
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool operator==(const Dialog&) const = default;
};

/// Text form of a corpus line, before id mapping.
struct RawUtterance {
  std::string text;
  std::map<std::string, std::string> attrs;
};

struct RawDialog {
  std::vector<RawUtterance> utterances;
};

using RawCorpus = std::vector<RawDialog>;

/// Parses one-dialog-per-line JSON. Errors carry the 1-based line number.
RawCorpus read_corpus_file(const std::filesystem::path& path);
RawCorpus parse_corpus(const std::string& text);
std::string format_corpus(const RawCorpus& corpus);
void write_corpus_file(const std::filesystem::path& path, const RawCorpus& corpus);

/// Most frequent cap-4 tokens plus the specials; ties break lexicographically.
Vocabulary build_vocab(const RawCorpus& corpus, std::size_t cap);

/// Maps text to EOS-terminated ids with UNK fallback.
std::vector<int> encode_text(const std::string& text, const Vocabulary& vocab);
/// Inverse of encode_text up to tokenization; EOS and PAD are dropped.
std::string decode_tokens(const std::vector<int>& tokens, const Vocabulary& vocab);

std::vector<Dialog> encode_corpus(const RawCorpus& corpus,
                                  const AttributeSchema& schema,
                                  const Vocabulary& vocab);
RawCorpus decode_corpus(const std::vector<Dialog>& dialogs,
                        const AttributeSchema& schema, const Vocabulary& vocab);

std::vector<Dialog> load_corpus(const std::filesystem::path& path,
                                const AttributeSchema& schema,
                                const Vocabulary& vocab);
/// Build mode: constructs the vocabulary from the file with `cap`.
std::vector<Dialog> load_corpus(const std::filesystem::path& path,
                                const AttributeSchema& schema, std::size_t cap,
                                Vocabulary& vocab_out);
void save_corpus(const std::filesystem::path& path,
                 const std::vector<Dialog>& dialogs,
                 const AttributeSchema& schema, const Vocabulary& vocab);

struct DullSet {
  std::vector<std::vector<int>> utterances;  ///< EOS-terminated
  std::vector<std::size_t> token_counts;     ///< N_s, EOS excluded
  std::vector<std::size_t> skipped_lines;    ///< 1-based blank lines

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
};

DullSet make_dull_set(const std::vector<std::string>& lines, const Vocabulary& vocab);
DullSet load_dull_set(const std::filesystem::path& path, const Vocabulary& vocab,
                      bool require_nonempty = true);

/// Splits dialogs deterministically: the last `fraction` (rounded, at least
/// one when possible) go to the second half. Order is preserved.
std::pair<std::vector<Dialog>, std::vector<Dialog>> split_dialogs(
    const std::vector<Dialog>& dialogs, double fraction);

}  // namespace attrdialog

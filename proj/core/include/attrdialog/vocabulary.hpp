// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace attrdialog {

/// Bijection between surface tokens and integer ids. Ids 0-3 are reserved
/// for <pad>, <unk>, <sos> and <eos> and are never reassigned.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr std::size_t kReserved = 4;

  /// Vocabulary holding only the reserved specials.
  Vocabulary();

  /// Builds from tokens in id order; the first four must be the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  static const std::vector<std::string>& specials();

  /// Appends a token if absent and returns its id.
  int add(const std::string& token);
  /// Id of `token`, or kUnk when it is not in the table.
  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Lowercases (ASCII) and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace attrdialog

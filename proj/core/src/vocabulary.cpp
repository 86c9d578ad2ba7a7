// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/vocabulary.hpp"

#include <cctype>
#include <fstream>

#include "attrdialog/error.hpp"

namespace attrdialog {

const std::vector<std::string>& Vocabulary::specials() {
  static const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<sos>", "<eos>"};
  return kSpecials;
}

Vocabulary::Vocabulary() {
  for (const auto& s : specials()) add(s);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved) {
    throw FormatError("vocabulary must start with the four reserved tokens");
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != specials()[i]) {
      throw FormatError("vocabulary line " + std::to_string(i + 1) + " must read \"" +
                        specials()[i] + "\", got \"" + tokens[i] + "\"");
    }
  }
  Vocabulary vocab;
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (vocab.find(tokens[i])) {
      throw FormatError("duplicate vocabulary token \"" + tokens[i] + "\" on line " +
                        std::to_string(i + 1));
    }
    vocab.add(tokens[i]);
  }
  return vocab;
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

}  // namespace attrdialog

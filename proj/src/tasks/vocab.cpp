// SPDX-License-Identifier: Apache-2.0
#include "anira/tasks/vocab.hpp"

#include <cctype>
#include <cstdio>

#include "anira/error.hpp"
#include "anira/rng.hpp"

namespace anira {

std::string tokens::query_k(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "<query-%02d>", k);
  return buf;
}

Vocabulary::Vocabulary() {
  for (auto t : {tokens::pad, tokens::bos, tokens::ans, tokens::eoa}) add(std::string(t));
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  if (tokens.size() < 4 || tokens[0] != tokens::pad || tokens[1] != tokens::bos || tokens[2] != tokens::ans ||
      tokens[3] != tokens::eoa) {
    throw DataError("vocabulary must start with <pad> <bos> <ans> <eoa>");
  }
  for (const auto& t : tokens) {
    if (contains(t)) throw DataError("duplicate vocabulary token '" + t + "'");
    add(t);
  }
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  if (token.empty() || token.find_first_of(" \t\n") != std::string::npos) {
    throw ContractError("vocabulary tokens must be non-empty and contain no whitespace");
  }
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw DataError("unknown token '" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const { return encode(split_words(text)); }

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::string Vocabulary::version() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(joined)));
  return buf;
}

}  // namespace anira

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace anira {

namespace tokens {
inline constexpr std::string_view pad = "<pad>";
inline constexpr std::string_view bos = "<bos>";
inline constexpr std::string_view ans = "<ans>";
inline constexpr std::string_view eoa = "<eoa>";
inline constexpr std::string_view query = "<q>";
/// "<query-03>" style step-count tokens.
std::string query_k(int k);
}  // namespace tokens

/// Bidirectional token/id map. Ids are dense and assigned in insertion order;
/// every vocabulary starts with the control tokens <pad> <bos> <ans> <eoa>.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  int add(const std::string& token);
  bool contains(std::string_view token) const;
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad() const { return 0; }
  int bos() const { return 1; }
  int ans() const { return 2; }
  int eoa() const { return 3; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;
  /// Whitespace-separated text to ids, and back.
  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  /// Stable fingerprint of the token list (hex FNV-1a).
  std::string version() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace anira

// SPDX-License-Identifier: Apache-2.0
//
// Incremental prefix parser. After each pushed token it extends two charts:
//   beta[i, X, k]     inside probability of X over [i, k)
//   gamma[i, j, Y, Z] sum_X P(X -> Y Z) * beta[i, Y, j]: Y recognized over
//                     [i, j), Z expected from j
// and reports per-token complexity proxies.
//
// Operation counting: one ops_mul per probability product actually formed,
// one ops_add per accumulation into a cell already holding mass; combinations
// with a zero factor are skipped and count nothing.
//
// Once no sentence of the grammar starts with the prefix, the record is
// flagged zero_mass and all four proxies are 0. The charts keep the exact
// inside probabilities of every span either way.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "anira/pcfg/grammar.hpp"

namespace anira::pcfg {

struct TokenComplexity {
  std::size_t position = 0;  // 0-based index of the pushed token
  std::string token;
  std::size_t active_gamma_slice = 0;  // non-zero gamma[i, N, Y, Z], N the new length
  std::size_t active_beta_end = 0;     // non-zero beta[i, X, N]
  std::uint64_t ops_add = 0;
  std::uint64_t ops_mul = 0;
  bool zero_mass = false;  // prefix of no sentence
};

class IncrementalParser {
 public:
  explicit IncrementalParser(const Grammar& grammar);

  /// Throws DataError for a token outside the terminal set.
  TokenComplexity push(std::string_view token);

  std::size_t length() const { return beta_.size(); }
  /// beta[i, X, k]; ContractError unless 0 <= i < k <= length().
  double inside(int nonterminal, std::size_t i, std::size_t k) const;
  /// gamma[i, j, Y, Z] for 0 <= i < j <= length(); 0 for pairs without a rule.
  double gamma(std::size_t i, std::size_t j, int left, int right) const;
  /// Probability the whole prefix is a complete sentence: beta[0, S, N].
  double sentence_probability() const;
  /// False once no sentence starts with the tokens pushed so far.
  bool alive() const { return !dead_; }

 private:
  const Grammar& g_;
  std::size_t nx_, np_;
  std::vector<std::vector<double>> beta_;   // [k-1][i * nx + X]
  std::vector<std::vector<double>> gamma_;  // [j-1][i * np + pair]
  std::vector<char> productive_;            // derives some terminal string
  bool dead_ = false;

  bool prefix_viable() const;
};

std::vector<TokenComplexity> extract_sequence_proxies(const Grammar& grammar, const std::vector<std::string>& tokens);

/// CSV: position,token,active_gamma_slice,active_beta_end,ops_add,ops_mul
std::string proxies_csv(const std::vector<TokenComplexity>& records);

/// Exhaustive inside probabilities by top-down recursion over every split
/// point and rule of every span (memoised per span), independent of the
/// incremental schedule. Refuses strings longer than 10 tokens.
class BruteForceInside {
 public:
  BruteForceInside(const Grammar& grammar, const std::vector<std::string>& tokens);

  double probability(int nonterminal, std::size_t i, std::size_t k);
  /// Number of distinct parse trees of X over [i, k).
  std::uint64_t trees(int nonterminal, std::size_t i, std::size_t k);

  static constexpr std::size_t kMaxLength = 10;

 private:
  const Grammar& g_;
  std::vector<int> terms_;
  std::vector<double> memo_p_;
  std::vector<std::int64_t> memo_t_;
  std::vector<char> done_p_;
  std::size_t index(int x, std::size_t i, std::size_t k) const;
};

}  // namespace anira::pcfg

// SPDX-License-Identifier: Apache-2.0
//
// Probabilistic context-free grammars in binary + lexical form.
//
// Text format, one rule per line ('#' starts a comment):
//   X -> Y Z : p
//   X -> 'a' : p
// The first left-hand side is the start symbol. Right-hand sides longer than
// two symbols are binarized at load: X -> A B C becomes X -> A X@1 and
// X@1 -> B C (probability 1). Terminals inside multi-symbol right-hand sides
// get a preterminal "'a'@T" -> 'a' with probability 1. Unary
// nonterminal rules are rejected.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "anira/rng.hpp"

namespace anira::pcfg {

struct BinaryRule {
  int lhs, left, right;
  double prob;
};

struct LexicalRule {
  int lhs, terminal;
  double prob;
};

/// A sampled derivation: the terminal string plus a bracketed tree.
struct Derivation {
  std::vector<std::string> tokens;
  std::string tree;
  int depth = 0;  // nonterminal levels on the longest root-to-leaf path
  bool truncated = false;  // stopped at the token cap
};

class Grammar {
 public:
  /// Throws ParseError (with a line number) on malformed text and DataError
  /// when some nonterminal's probabilities do not sum to one.
  static Grammar parse(std::string_view text);
  static Grammar load(const std::string& path);
  /// 16 nonterminals, 3 terminals, 35 rules, derivation depth at most 7.
  static const Grammar& default_grammar();
  static std::string_view default_grammar_text();

  std::string to_text() const;

  const std::vector<std::string>& nonterminals() const { return nonterminals_; }
  const std::vector<std::string>& terminals() const { return terminals_; }
  const std::vector<BinaryRule>& binary_rules() const { return binary_; }
  const std::vector<LexicalRule>& lexical_rules() const { return lexical_; }
  int start() const { return start_; }
  std::size_t rule_count() const { return binary_.size() + lexical_.size(); }

  int nonterminal_id(std::string_view name) const;  // -1 if absent
  int terminal_id(std::string_view name) const;     // -1 if absent

  /// Distinct (left, right) child pairs; γ is indexed by these.
  const std::vector<std::pair<int, int>>& child_pairs() const { return pairs_; }
  /// Index into child_pairs() of a binary rule.
  int pair_of_rule(std::size_t rule) const { return rule_pair_[rule]; }

  /// Top-down sampling by rule probabilities from the start symbol; stops
  /// early (truncated) once max_tokens terminals have been emitted.
  Derivation sample(Rng& rng, std::size_t max_tokens = 4096) const;

  /// Per-nonterminal probability sums; used by validation.
  std::vector<double> probability_sums() const;
  void validate(double tol = 1e-12) const;

 private:
  int intern_nonterminal(const std::string& name);
  int intern_terminal(const std::string& name);
  void index();
  void sample_into(int symbol, Rng& rng, int level, std::size_t max_tokens, Derivation& out) const;

  std::vector<std::string> nonterminals_, terminals_;
  std::vector<BinaryRule> binary_;
  std::vector<LexicalRule> lexical_;
  int start_ = 0;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<int> rule_pair_;
};

}  // namespace anira::pcfg

// SPDX-License-Identifier: Apache-2.0
#include "anira/pcfg/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "anira/error.hpp"

namespace anira::pcfg {

namespace {

constexpr std::string_view kDefaultGrammar = R"(# Layered grammar: every nonterminal branches with probability 0.5.
S -> A B : 0.25
S -> B A : 0.25
S -> 'a' : 0.5
A -> C D : 0.25
A -> D E : 0.25
A -> 'b' : 0.5
B -> E C : 0.5
B -> 'c' : 0.5
C -> F G : 0.25
C -> G H : 0.25
C -> 'a' : 0.5
D -> H F : 0.5
D -> 'b' : 0.5
E -> F H : 0.5
E -> 'c' : 0.5
F -> I J : 0.25
F -> J K : 0.25
F -> 'a' : 0.5
G -> K I : 0.5
G -> 'b' : 0.5
H -> I K : 0.5
H -> 'c' : 0.5
I -> L M : 0.5
I -> 'a' : 0.5
J -> M L : 0.5
J -> 'b' : 0.5
K -> L N : 0.25
K -> O M : 0.25
K -> 'c' : 0.5
L -> N O : 0.5
L -> 'a' : 0.5
M -> O N : 0.5
M -> 'b' : 0.5
N -> 'c' : 1.0
O -> 'a' : 1.0
)";

bool is_terminal_symbol(const std::string& s) { return s.size() >= 3 && s.front() == '\'' && s.back() == '\''; }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

int Grammar::intern_nonterminal(const std::string& name) {
  const int id = nonterminal_id(name);
  if (id >= 0) return id;
  nonterminals_.push_back(name);
  return static_cast<int>(nonterminals_.size()) - 1;
}

int Grammar::intern_terminal(const std::string& name) {
  const int id = terminal_id(name);
  if (id >= 0) return id;
  terminals_.push_back(name);
  return static_cast<int>(terminals_.size()) - 1;
}

int Grammar::nonterminal_id(std::string_view name) const {
  auto it = std::find(nonterminals_.begin(), nonterminals_.end(), name);
  return it == nonterminals_.end() ? -1 : static_cast<int>(it - nonterminals_.begin());
}

int Grammar::terminal_id(std::string_view name) const {
  auto it = std::find(terminals_.begin(), terminals_.end(), name);
  return it == terminals_.end() ? -1 : static_cast<int>(it - terminals_.begin());
}

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::map<std::string, int> fresh_count;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "grammar line " + std::to_string(lineno) + ": ";
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto arrow = line.find("->");
    const auto colon = line.rfind(':');
    if (arrow == std::string::npos || colon == std::string::npos || colon < arrow) {
      throw ParseError(where + "expected 'X -> rhs : p'");
    }
    const std::string lhs = trim(std::string_view(line).substr(0, arrow));
    std::istringstream rhs_in(line.substr(arrow + 2, colon - arrow - 2));
    std::vector<std::string> rhs;
    for (std::string s; rhs_in >> s;) rhs.push_back(s);
    double p = 0.0;
    try {
      std::size_t used = 0;
      const std::string ptext = trim(std::string_view(line).substr(colon + 1));
      p = std::stod(ptext, &used);
      if (used != ptext.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(where + "bad probability");
    }
    if (lhs.empty() || is_terminal_symbol(lhs) || lhs.find(' ') != std::string::npos) {
      throw ParseError(where + "bad left-hand side '" + lhs + "'");
    }
    if (rhs.empty()) throw ParseError(where + "empty right-hand side");
    if (!(p > 0.0 && p <= 1.0)) throw ParseError(where + "probability must lie in (0, 1]");
    const int x = g.intern_nonterminal(lhs);
    if (!any) g.start_ = x;
    any = true;
    if (rhs.size() == 1) {
      if (!is_terminal_symbol(rhs[0])) throw ParseError(where + "unary nonterminal rules are not supported");
      g.lexical_.push_back({x, g.intern_terminal(rhs[0].substr(1, rhs[0].size() - 2)), p});
      continue;
    }
    // Terminals inside longer right-hand sides go through a preterminal.
    std::vector<int> symbols;
    for (const auto& s : rhs) {
      if (!is_terminal_symbol(s)) {
        symbols.push_back(g.intern_nonterminal(s));
        continue;
      }
      const std::string pre = s + "@T";
      const bool is_new = g.nonterminal_id(pre) < 0;
      const int id = g.intern_nonterminal(pre);
      if (is_new) g.lexical_.push_back({id, g.intern_terminal(s.substr(1, s.size() - 2)), 1.0});
      symbols.push_back(id);
    }
    int head = x;
    double prob = p;
    for (std::size_t k = 0; k + 2 < symbols.size(); ++k) {
      const int fresh = g.intern_nonterminal(lhs + "@" + std::to_string(++fresh_count[lhs]));
      g.binary_.push_back({head, symbols[k], fresh, prob});
      head = fresh;
      prob = 1.0;
    }
    g.binary_.push_back({head, symbols[symbols.size() - 2], symbols.back(), prob});
  }
  if (!any) throw ParseError("grammar has no rules");
  g.validate();
  g.index();
  return g;
}

Grammar Grammar::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grammar " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string_view Grammar::default_grammar_text() { return kDefaultGrammar; }

const Grammar& Grammar::default_grammar() {
  static const Grammar g = parse(kDefaultGrammar);
  return g;
}

std::string Grammar::to_text() const {
  std::ostringstream out;
  out.precision(17);
  // Rules grouped by left-hand side in nonterminal order so the start comes first.
  for (std::size_t x = 0; x < nonterminals_.size(); ++x) {
    for (const auto& r : binary_)
      if (r.lhs == static_cast<int>(x))
        out << nonterminals_[x] << " -> " << nonterminals_[r.left] << ' ' << nonterminals_[r.right] << " : " << r.prob
            << '\n';
    for (const auto& r : lexical_)
      if (r.lhs == static_cast<int>(x))
        out << nonterminals_[x] << " -> '" << terminals_[r.terminal] << "' : " << r.prob << '\n';
  }
  return out.str();
}

std::vector<double> Grammar::probability_sums() const {
  std::vector<double> sums(nonterminals_.size(), 0.0);
  for (const auto& r : binary_) sums[r.lhs] += r.prob;
  for (const auto& r : lexical_) sums[r.lhs] += r.prob;
  return sums;
}

void Grammar::validate(double tol) const {
  const auto sums = probability_sums();
  for (std::size_t x = 0; x < sums.size(); ++x) {
    if (std::abs(sums[x] - 1.0) > tol) {
      throw DataError("rule probabilities of " + nonterminals_[x] + " sum to " + std::to_string(sums[x]));
    }
  }
}

void Grammar::index() {
  pairs_.clear();
  rule_pair_.clear();
  for (const auto& r : binary_) {
    const std::pair<int, int> p{r.left, r.right};
    auto it = std::find(pairs_.begin(), pairs_.end(), p);
    if (it == pairs_.end()) {
      pairs_.push_back(p);
      rule_pair_.push_back(static_cast<int>(pairs_.size()) - 1);
    } else {
      rule_pair_.push_back(static_cast<int>(it - pairs_.begin()));
    }
  }
}

void Grammar::sample_into(int symbol, Rng& rng, int level, std::size_t max_tokens, Derivation& out) const {
  if (out.truncated) return;
  if (out.tokens.size() >= max_tokens) {
    out.truncated = true;
    return;
  }
  out.depth = std::max(out.depth, level);
  double u = rng.uniform();
  for (const auto& r : lexical_) {
    if (r.lhs != symbol) continue;
    u -= r.prob;
    if (u < 0.0) {
      out.tokens.push_back(terminals_[r.terminal]);
      out.tree += "(" + nonterminals_[symbol] + " " + terminals_[r.terminal] + ")";
      return;
    }
  }
  const BinaryRule* last = nullptr;
  for (const auto& r : binary_) {
    if (r.lhs != symbol) continue;
    last = &r;
    u -= r.prob;
    if (u < 0.0) break;
  }
  if (!last) {
    // Rounding left u just above zero after the lexical rules.
    for (auto it = lexical_.rbegin(); it != lexical_.rend(); ++it) {
      if (it->lhs == symbol) {
        out.tokens.push_back(terminals_[it->terminal]);
        out.tree += "(" + nonterminals_[symbol] + " " + terminals_[it->terminal] + ")";
        return;
      }
    }
    throw DataError("nonterminal " + nonterminals_[symbol] + " has no rules");
  }
  out.tree += "(" + nonterminals_[symbol] + " ";
  sample_into(last->left, rng, level + 1, max_tokens, out);
  out.tree += " ";
  sample_into(last->right, rng, level + 1, max_tokens, out);
  out.tree += ")";
}

Derivation Grammar::sample(Rng& rng, std::size_t max_tokens) const {
  Derivation d;
  sample_into(start_, rng, 1, max_tokens, d);
  return d;
}

}  // namespace anira::pcfg

// SPDX-License-Identifier: Apache-2.0
#include "anira/pcfg/parser.hpp"

#include <sstream>

#include "anira/error.hpp"

namespace anira::pcfg {

IncrementalParser::IncrementalParser(const Grammar& grammar)
    : g_(grammar), nx_(grammar.nonterminals().size()), np_(grammar.child_pairs().size()), productive_(nx_, 0) {
  for (const auto& r : g_.lexical_rules()) productive_[r.lhs] = 1;
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& r : g_.binary_rules())
      if (!productive_[r.lhs] && productive_[r.left] && productive_[r.right]) changed = productive_[r.lhs] = 1;
  }
}

bool IncrementalParser::prefix_viable() const {
  const std::size_t n = beta_.size();
  const std::vector<double>& col = beta_.back();
  // live[i][X]: X derives tokens [i, n) followed by some continuation.
  std::vector<std::vector<char>> live(n, std::vector<char>(nx_, 0));
  for (std::size_t i = n; i-- > 0;) {
    std::vector<char>& v = live[i];
    for (std::size_t x = 0; x < nx_; ++x) v[x] = col[i * nx_ + x] != 0.0;
    for (const auto& r : g_.binary_rules()) {
      if (v[r.lhs] || !productive_[r.right]) continue;
      for (std::size_t j = i + 1; j < n && !v[r.lhs]; ++j)
        if (beta_[j - 1][i * nx_ + r.left] != 0.0 && live[j][r.right]) v[r.lhs] = 1;
    }
    // Left-corner closure: X -> Y Z with Y still open at n.
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& r : g_.binary_rules())
        if (!v[r.lhs] && v[r.left] && productive_[r.right]) changed = v[r.lhs] = 1;
    }
  }
  return live[0][g_.start()] != 0;
}

TokenComplexity IncrementalParser::push(std::string_view token) {
  const int a = g_.terminal_id(token);
  if (a < 0) throw DataError("token '" + std::string(token) + "' is not a terminal of the grammar");
  TokenComplexity rec;
  rec.position = beta_.size();
  rec.token = std::string(token);
  const std::size_t k = beta_.size() + 1;

  beta_.emplace_back(k * nx_, 0.0);
  std::vector<double>& col = beta_.back();
  for (const auto& r : g_.lexical_rules())
    if (r.terminal == a) col[(k - 1) * nx_ + r.lhs] = r.prob;

  const auto& rules = g_.binary_rules();
  // Shorter spans first: beta[j, Z, k] for j > i is final before [i, k) needs it.
  for (std::size_t i = k - 1; i-- > 0;) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const std::vector<double>& left_col = beta_[j - 1];
      for (const auto& r : rules) {
        const double left = left_col[i * nx_ + r.left];
        if (left == 0.0) continue;
        const double right = col[j * nx_ + r.right];
        if (right == 0.0) continue;
        double& cell = col[i * nx_ + r.lhs];
        rec.ops_mul += 2;
        if (cell != 0.0) ++rec.ops_add;
        cell += r.prob * left * right;
      }
    }
  }

  gamma_.emplace_back(k * np_, 0.0);
  std::vector<double>& gcol = gamma_.back();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t r = 0; r < rules.size(); ++r) {
      const double left = col[i * nx_ + rules[r].left];
      if (left == 0.0) continue;
      double& cell = gcol[i * np_ + static_cast<std::size_t>(g_.pair_of_rule(r))];
      ++rec.ops_mul;
      if (cell != 0.0) ++rec.ops_add;
      cell += rules[r].prob * left;
    }
  }

  dead_ = dead_ || !prefix_viable();
  rec.zero_mass = dead_;
  if (dead_) {
    // No sentence starts with this prefix: the live parse is empty.
    rec.ops_add = rec.ops_mul = 0;
    return rec;
  }
  for (double v : col) rec.active_beta_end += v != 0.0;
  for (double v : gcol) rec.active_gamma_slice += v != 0.0;
  return rec;
}

double IncrementalParser::inside(int x, std::size_t i, std::size_t k) const {
  if (x < 0 || static_cast<std::size_t>(x) >= nx_) throw ContractError("unknown nonterminal id");
  if (!(i < k && k <= beta_.size())) throw ContractError("span out of range");
  return beta_[k - 1][i * nx_ + static_cast<std::size_t>(x)];
}

double IncrementalParser::gamma(std::size_t i, std::size_t j, int left, int right) const {
  if (!(i < j && j <= gamma_.size())) throw ContractError("span out of range");
  const auto& pairs = g_.child_pairs();
  for (std::size_t p = 0; p < pairs.size(); ++p)
    if (pairs[p].first == left && pairs[p].second == right) return gamma_[j - 1][i * np_ + p];
  return 0.0;
}

double IncrementalParser::sentence_probability() const {
  return beta_.empty() ? 0.0 : inside(g_.start(), 0, beta_.size());
}

std::vector<TokenComplexity> extract_sequence_proxies(const Grammar& grammar, const std::vector<std::string>& tokens) {
  IncrementalParser parser(grammar);
  std::vector<TokenComplexity> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(parser.push(t));
  return out;
}

std::string proxies_csv(const std::vector<TokenComplexity>& records) {
  std::ostringstream out;
  out << "position,token,active_gamma_slice,active_beta_end,ops_add,ops_mul\n";
  for (const auto& r : records) {
    out << r.position << ',' << r.token << ',' << r.active_gamma_slice << ',' << r.active_beta_end << ','
        << r.ops_add << ',' << r.ops_mul << '\n';
  }
  return out.str();
}

BruteForceInside::BruteForceInside(const Grammar& grammar, const std::vector<std::string>& tokens) : g_(grammar) {
  if (tokens.size() > kMaxLength) throw ContractError("brute-force inside refuses strings longer than 10 tokens");
  for (const auto& t : tokens) terms_.push_back(g_.terminal_id(t));
  const std::size_t n = tokens.size() + 1, size = g_.nonterminals().size() * n * n;
  memo_p_.assign(size, 0.0);
  memo_t_.assign(size, -1);
  done_p_.assign(size, 0);
}

std::size_t BruteForceInside::index(int x, std::size_t i, std::size_t k) const {
  const std::size_t n = terms_.size() + 1;
  return (static_cast<std::size_t>(x) * n + i) * n + k;
}

double BruteForceInside::probability(int x, std::size_t i, std::size_t k) {
  if (!(i < k && k <= terms_.size())) throw ContractError("span out of range");
  const std::size_t id = index(x, i, k);
  if (done_p_[id]) return memo_p_[id];
  double total = 0.0;
  if (k == i + 1) {
    for (const auto& r : g_.lexical_rules())
      if (r.lhs == x && r.terminal == terms_[i]) total += r.prob;
  } else {
    for (const auto& r : g_.binary_rules()) {
      if (r.lhs != x) continue;
      for (std::size_t j = i + 1; j < k; ++j) total += r.prob * probability(r.left, i, j) * probability(r.right, j, k);
    }
  }
  done_p_[id] = 1;
  memo_p_[id] = total;
  return total;
}

std::uint64_t BruteForceInside::trees(int x, std::size_t i, std::size_t k) {
  if (!(i < k && k <= terms_.size())) throw ContractError("span out of range");
  const std::size_t id = index(x, i, k);
  if (memo_t_[id] >= 0) return static_cast<std::uint64_t>(memo_t_[id]);
  std::uint64_t count = 0;
  if (k == i + 1) {
    for (const auto& r : g_.lexical_rules()) count += (r.lhs == x && r.terminal == terms_[i]) ? 1 : 0;
  } else {
    for (const auto& r : g_.binary_rules()) {
      if (r.lhs != x) continue;
      for (std::size_t j = i + 1; j < k; ++j) count += trees(r.left, i, j) * trees(r.right, j, k);
    }
  }
  memo_t_[id] = static_cast<std::int64_t>(count);
  return count;
}

}  // namespace anira::pcfg

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "anira/error.hpp"
#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/graph_tasks.hpp"
#include "anira/tasks/lano.hpp"
#include "anira/tasks/mano.hpp"
#include "anira/tasks/suite.hpp"
#include "../support/oracles.hpp"

using namespace anira;
using namespace anira::testing;

namespace {

std::string dump(const Dataset& d) {
  std::ostringstream out;
  write_dataset(out, d);
  return out.str();
}

}  // namespace

TEST_CASE("mano alphabet and examples") {
  const auto& v = mano::vocabulary();
  CHECK(v.size() == 4 + 3 + 23);
  CHECK(v.contains("22"));
  CHECK_FALSE(v.contains("23"));
  CHECK(mano::kModulus == 23);
  CHECK(mano::evaluate({"+", "3", "5"}) == 8);
  CHECK(mano::evaluate({"*", "22", "22"}) == 1);
  CHECK(mano::evaluate({"-", "2", "5"}) == 20);
  CHECK(mano::evaluate({"7"}) == 7);
  CHECK(mano::evaluate({"+", "*", "2", "3", "4"}) == 10);
  CHECK(mano::operator_count({"+", "*", "2", "3", "4"}) == 2);
  CHECK_THROWS_AS(mano::evaluate({"+", "3"}), ParseError);
  CHECK_THROWS_AS(mano::evaluate({"3", "4"}), ParseError);
  CHECK_THROWS_AS(mano::evaluate({"+", "3", "23"}), ParseError);
  CHECK_THROWS_AS(mano::evaluate({}), ParseError);
}

TEST_CASE("mano stack oracle agrees with a recursive evaluator") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const int L = static_cast<int>(rng.integer(0, 16));
    auto e = mano::random_expression(L, rng.engine()());
    CHECK(e.size() == static_cast<std::size_t>(2 * L + 1));
    std::size_t pos = 0;
    CHECK(mano::evaluate(e) == recursive_eval(e, pos));
    CHECK(pos == e.size());
    CHECK(mano::operator_count(e) == L);
  }
}

TEST_CASE("mano instances") {
  for (int L = 1; L <= 16; ++L) {
    auto inst = mano::generate(L, 100 + L);
    CHECK(inst.knob == L);
    CHECK(inst.prompt_ids.size() == static_cast<std::size_t>(2 * L + 1 + 2));
    CHECK(inst.answer_ids.size() == 2);
    CHECK(oracle_answer(inst, mano::vocabulary()) == inst.answer_ids);
    CHECK(payload_knob(inst) == L);
  }
  CHECK_THROWS_AS(mano::generate(0, 1), ContractError);
}

TEST_CASE("brevo examples") {
  auto chain = named_graph({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}});
  CHECK(brevo::solve(chain, "C") == std::vector<std::string>{"A", "B"});
  auto diamond = named_graph({"D", "C", "B", "A"}, {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}});
  CHECK(brevo::solve(diamond, "D") == std::vector<std::string>{"A", "B", "C"});
  CHECK(brevo::solve(chain, "A").empty());
  CHECK_THROWS_AS(brevo::solve(chain, "Z"), DataError);
}

TEST_CASE("brevo answers are topological orders of the dependency set") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.integer(2, 30));
    auto inst = brevo::generate(n, rng.engine()());
    const Graph g = Graph::from_json(inst.payload);
    REQUIRE(g.size() == static_cast<std::size_t>(n));
    std::vector<int> indeg(n, 0), outdeg(n, 0);
    for (auto [u, v] : g.edges) {
      ++outdeg[u];
      ++indeg[v];
    }
    for (int i = 0; i < n; ++i) {
      CHECK(indeg[i] <= 4);
      CHECK(outdeg[i] <= 4);
    }
    const auto reach = closure(g);
    for (int i = 0; i < n; ++i) CHECK_FALSE(reach[i][i]);
    const int q = g.index_of(inst.payload.at("query").template get<std::string>());
    const auto answer = brevo::solve(g, q);
    std::set<int> expected, got(answer.begin(), answer.end());
    for (int i = 0; i < n; ++i)
      if (reach[i][q]) expected.insert(i);
    CHECK(got == expected);
    CHECK(got.size() == answer.size());
    CHECK_FALSE(got.count(q));
    CHECK_FALSE(answer.empty());
    std::map<int, std::size_t> position;
    for (std::size_t k = 0; k < answer.size(); ++k) position[answer[k]] = k;
    for (auto [u, v] : g.edges)
      if (got.count(u) && got.count(v)) CHECK(position[u] < position[v]);
    CHECK(oracle_answer(inst, brevo::vocabulary()) == inst.answer_ids);
    CHECK(payload_knob(inst) == n);
  }
}

TEST_CASE("depo") {
  auto cycle = named_graph({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}, {"C", "A"}});
  CHECK(cycle.names[depo::walk(cycle, 0, 2)] == "C");
  CHECK(depo::vocabulary().contains("<query-03>"));
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = static_cast<int>(rng.integer(2, 50));
    const int k = static_cast<int>(rng.integer(1, 16));
    auto inst = depo::generate(n, k, rng.engine()());
    const Graph g = Graph::from_json(inst.payload);
    // Successor function composed k times.
    std::vector<int> succ(n), composed(n);
    for (auto [u, v] : g.edges) succ[u] = v;
    for (int i = 0; i < n; ++i) composed[i] = i;
    for (int s = 0; s < k; ++s)
      for (int i = 0; i < n; ++i) composed[i] = succ[composed[i]];
    for (int i = 0; i < n; ++i) CHECK(depo::walk(g, i, k) == composed[i]);
    const std::size_t queries = std::min(n, 10);
    CHECK(inst.answer_ids.size() == 5 * queries);
    std::size_t supervised = 0;
    for (std::size_t a = 0; a < inst.answer_ids.size(); ++a)
      if (inst.is_supervised(a)) {
        ++supervised;
        CHECK(a % 5 == 3);
      }
    CHECK(supervised == queries);
    CHECK(inst.answer_ids[0] == depo::vocabulary().id(tokens::query_k(k)));
    CHECK(oracle_answer(inst, depo::vocabulary()) == inst.answer_ids);
    CHECK(payload_knob(inst) == k);
  }
}

TEST_CASE("lano examples") {
  const auto single = pcfg::Grammar::parse("S -> 'a' : 1.0\n");
  const auto pair = pcfg::Grammar::parse("S -> A B : 1.0\nA -> 'a' : 1.0\nB -> 'b' : 1.0\n");
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    CHECK(single.sample(rng).tokens == std::vector<std::string>{"a"});
    CHECK(pair.sample(rng).tokens == std::vector<std::string>{"a", "b"});
  }
  const auto vocab = lano::vocabulary(pair);
  auto inst = lano::generate(pair, vocab, 5);
  CHECK(inst.knob == 0);
  CHECK(oracle_answer(inst, vocab) == inst.answer_ids);
}

TEST_CASE("lano string frequencies follow derivation probabilities") {
  // S -> S S : p, S -> a : 1 - p. The string a^n has C(n-1) trees, each of
  // probability p^(n-1) (1-p)^n.
  const double p = 0.3;
  const auto g = pcfg::Grammar::parse("S -> S S : 0.3\nS -> 'a' : 0.7\n");
  constexpr int draws = 100000;
  constexpr std::size_t cap = 60;
  std::vector<double> freq(cap + 1, 0.0), expect(cap + 1, 0.0);
  Rng rng(6);
  for (int i = 0; i < draws; ++i) {
    auto d = g.sample(rng, cap);
    freq[d.truncated ? 0 : d.tokens.size()] += 1.0 / draws;
  }
  double catalan = 1.0, covered = 0.0;
  for (std::size_t n = 1; n <= cap; ++n) {
    expect[n] = catalan * std::pow(p, static_cast<double>(n - 1)) * std::pow(1 - p, static_cast<double>(n));
    covered += expect[n];
    catalan = catalan * 2.0 * (2.0 * static_cast<double>(n) - 1.0) / (static_cast<double>(n) + 1.0);
  }
  expect[0] = 1.0 - covered;
  double tv = 0.0;
  for (std::size_t n = 0; n <= cap; ++n) tv += std::abs(freq[n] - expect[n]);
  CHECK(0.5 * tv < 0.02);
}

TEST_CASE("default grammar statistics") {
  const auto& g = pcfg::Grammar::default_grammar();
  CHECK(g.nonterminals().size() == 16);
  CHECK(g.terminals().size() == 3);
  CHECK(g.rule_count() == 35);
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) CHECK(g.sample(rng).depth <= 7);
}

TEST_CASE("vocabulary round trip") {
  const auto& v = brevo::vocabulary();
  const std::string text = "<bos> v03 v17 <q> v17 <ans> v03 <eoa>";
  CHECK(v.detokenize(v.tokenize(text)) == text);
  CHECK_THROWS_AS(v.id("v99"), DataError);
}

TEST_CASE("dataset round trip and determinism") {
  auto spec_of = [](TaskId task, std::vector<int> knobs, std::uint64_t seed) {
    GenerationSpec s;
    s.task = task;
    s.knobs = std::move(knobs);
    s.count = 250;
    s.seed = seed;
    return s;
  };
  const GenerationSpec specs[] = {spec_of(TaskId::mano, {1, 2, 3, 4, 5, 6}, 11), spec_of(TaskId::brevo, {3, 8, 15}, 12),
                                  spec_of(TaskId::depo, {1, 2, 3, 4}, 13), spec_of(TaskId::lano, {}, 14)};
  for (const auto& spec : specs) {
    Dataset d = generate_dataset(spec);
    REQUIRE(d.instances.size() == 250);
    for (const auto& inst : d.instances) CHECK(oracle_answer(inst, d.vocab) == inst.answer_ids);
    const std::string first = dump(d);
    std::istringstream in(first);
    Dataset back = read_dataset(in);
    CHECK(dump(back) == first);
    CHECK(dump(generate_dataset(spec)) == first);
  }
  std::istringstream bad(R"({"header":true,"task":"chess","vocab":[],"vocab_version":"x"})");
  CHECK_THROWS_WITH_AS(read_dataset(bad), doctest::Contains("unknown task id 'chess'"), ParseError);
  std::istringstream garbage("{not json}\n");
  CHECK_THROWS_WITH_AS(read_dataset(garbage), doctest::Contains("line 1"), ParseError);
}

// SPDX-License-Identifier: Apache-2.0
#include "anira/tasks/graph_tasks.hpp"

#include <algorithm>
#include <cstdio>

#include "anira/error.hpp"

namespace anira {

using nlohmann::json;

std::string node_name(int index) {
  if (index < 0 || index >= kNodePoolSize) throw ContractError("node index outside the name pool");
  char buf[8];
  std::snprintf(buf, sizeof(buf), "v%02d", index);
  return buf;
}

int Graph::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError("unknown node '" + name + "'");
  return static_cast<int>(it - names.begin());
}

namespace {

std::vector<std::vector<int>> adjacency(const Graph& g, bool reverse) {
  std::vector<std::vector<int>> adj(g.size());
  for (auto [u, v] : g.edges) {
    if (reverse) adj[v].push_back(u);
    else adj[u].push_back(v);
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end(), [&](int a, int b) { return g.names[a] < g.names[b]; });
  }
  return adj;
}

Vocabulary node_vocabulary() {
  Vocabulary v;
  for (int i = 0; i < kNodePoolSize; ++i) v.add(node_name(i));
  return v;
}

/// N distinct names drawn from the pool.
std::vector<std::string> draw_names(int n, Rng& rng) {
  if (n > kNodePoolSize) throw ContractError("graph has more nodes than the name pool");
  std::vector<int> pool(kNodePoolSize);
  for (int i = 0; i < kNodePoolSize; ++i) pool[i] = i;
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.integer(i, kNodePoolSize - 1));
    std::swap(pool[i], pool[j]);
    names.push_back(node_name(pool[i]));
  }
  return names;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

void push_edges(const Graph& g, const Vocabulary& vocab, std::vector<int>& out) {
  for (auto [u, v] : g.edges) {
    out.push_back(vocab.id(g.names[u]));
    out.push_back(vocab.id(g.names[v]));
  }
}

}  // namespace

std::vector<std::vector<int>> Graph::predecessors() const { return adjacency(*this, true); }
std::vector<std::vector<int>> Graph::successors() const { return adjacency(*this, false); }

json Graph::to_json() const {
  json e = json::array();
  for (auto [u, v] : edges) e.push_back({names[u], names[v]});
  return {{"nodes", names}, {"edges", e}};
}

Graph Graph::from_json(const json& j) {
  Graph g;
  try {
    g.names = j.at("nodes").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges")) {
      g.edges.emplace_back(g.index_of(e.at(0).get<std::string>()), g.index_of(e.at(1).get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed graph payload: ") + e.what());
  }
  return g;
}

namespace brevo {

const Vocabulary& vocabulary() {
  static const Vocabulary vocab = [] {
    Vocabulary v;
    v.add(std::string(tokens::query));
    for (int i = 0; i < kNodePoolSize; ++i) v.add(node_name(i));
    return v;
  }();
  return vocab;
}

Graph random_dag(int nodes, Rng& rng) {
  if (nodes < 2) throw ContractError("BREVO needs N >= 2");
  Graph g;
  g.names = draw_names(nodes, rng);
  std::vector<int> out_degree(nodes, 0);
  for (int i = 1; i < nodes; ++i) {
    const int want = static_cast<int>(rng.integer(1, std::min(kMaxDegree, i)));
    std::vector<int> open;
    for (int u = 0; u < i; ++u)
      if (out_degree[u] < kMaxDegree) open.push_back(u);
    shuffle(open, rng);
    for (int k = 0; k < want && k < static_cast<int>(open.size()); ++k) {
      g.edges.emplace_back(open[k], i);
      ++out_degree[open[k]];
    }
  }
  shuffle(g.edges, rng);
  return g;
}

std::vector<int> solve(const Graph& graph, int query) {
  if (query < 0 || static_cast<std::size_t>(query) >= graph.size()) throw DataError("query node out of range");
  const auto preds = graph.predecessors();
  std::vector<char> visited(graph.size(), 0);
  std::vector<int> order;
  // Explicit stack of (node, next child index) to emit in postorder.
  std::vector<std::pair<int, std::size_t>> stack{{query, 0}};
  visited[query] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < preds[node].size()) {
      const int child = preds[node][next++];
      if (!visited[child]) {
        visited[child] = 1;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    if (node != query) order.push_back(node);
    stack.pop_back();
  }
  return order;
}

std::vector<std::string> solve(const Graph& graph, const std::string& query) {
  std::vector<std::string> names;
  for (int i : solve(graph, graph.index_of(query))) names.push_back(graph.names[i]);
  return names;
}

TaskInstance generate(int nodes, std::uint64_t seed) {
  Rng rng(seed);
  Graph g = random_dag(nodes, rng);
  std::vector<int> candidates;
  for (auto [u, v] : g.edges) candidates.push_back(v);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const int query = candidates[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(candidates.size()) - 1))];

  const Vocabulary& v = vocabulary();
  TaskInstance inst;
  inst.task = TaskId::brevo;
  inst.knob = nodes;
  inst.seed = seed;
  inst.prompt_ids.push_back(v.bos());
  push_edges(g, v, inst.prompt_ids);
  inst.prompt_ids.push_back(v.id(tokens::query));
  inst.prompt_ids.push_back(v.id(g.names[query]));
  inst.prompt_ids.push_back(v.ans());
  json answer = json::array();
  for (int node : solve(g, query)) {
    inst.answer_ids.push_back(v.id(g.names[node]));
    answer.push_back(g.names[node]);
  }
  inst.answer_ids.push_back(v.eoa());
  inst.payload = g.to_json();
  inst.payload["query"] = g.names[query];
  inst.payload["answer"] = answer;
  return inst;
}

}  // namespace brevo

namespace depo {

const Vocabulary& vocabulary() {
  static const Vocabulary vocab = [] {
    Vocabulary v = node_vocabulary();
    for (int k = 1; k <= kMaxSteps; ++k) v.add(tokens::query_k(k));
    return v;
  }();
  return vocab;
}

int walk(const Graph& graph, int start, int steps) {
  const auto succ = graph.successors();
  int node = start;
  for (int s = 0; s < steps; ++s) {
    if (succ[node].size() != 1) throw DataError("node " + graph.names[node] + " has no unique successor");
    node = succ[node][0];
  }
  return node;
}

TaskInstance generate(int nodes, int steps, std::uint64_t seed) {
  if (nodes < 2) throw ContractError("DEPO needs N >= 2");
  if (steps < 1 || steps > kMaxSteps) throw ContractError("DEPO needs 1 <= K <= 16");
  Rng rng(seed);
  Graph g;
  g.names = draw_names(nodes, rng);
  for (int i = 0; i < nodes; ++i) g.edges.emplace_back(i, (i + 1) % nodes);
  shuffle(g.edges, rng);

  std::vector<int> starts(nodes);
  for (int i = 0; i < nodes; ++i) starts[i] = i;
  shuffle(starts, rng);
  starts.resize(std::min(nodes, kMaxQueries));

  const Vocabulary& v = vocabulary();
  TaskInstance inst;
  inst.task = TaskId::depo;
  inst.knob = steps;
  inst.seed = seed;
  inst.prompt_ids.push_back(v.bos());
  push_edges(g, v, inst.prompt_ids);
  const int qk = v.id(tokens::query_k(steps));
  json queries = json::array();
  for (int q : starts) {
    const int y = walk(g, q, steps);
    for (int id : {qk, v.id(g.names[q]), v.ans(), v.id(g.names[y]), v.eoa()}) inst.answer_ids.push_back(id);
    for (std::uint8_t s : {0, 0, 0, 1, 0}) inst.supervised.push_back(s);
    queries.push_back({g.names[q], g.names[y]});
  }
  inst.payload = g.to_json();
  inst.payload["k"] = steps;
  inst.payload["queries"] = queries;
  return inst;
}

}  // namespace depo

}  // namespace anira

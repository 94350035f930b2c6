// SPDX-License-Identifier: Apache-2.0
#include "anira/analysis/probes.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <set>

#include "anira/error.hpp"
#include "anira/tasks/mano.hpp"

namespace anira::analysis {

using nlohmann::json;

std::vector<ManoParseState> mano_parse_state(const std::vector<std::string>& expression) {
  mano::evaluate(expression);  // validates
  struct Open {
    int need;   // operands still required
    int nodes;  // operator nodes inside so far, itself included
  };
  std::vector<Open> stack;
  std::vector<ManoParseState> out;
  int last_completed = 0;
  for (const auto& t : expression) {
    ManoParseState s;
    s.token = t;
    s.is_operator = mano::is_operator(t);
    s.stack_depth = static_cast<int>(stack.size());
    s.remaining_operands = stack.empty() ? 0 : stack.back().need;
    s.completed_subtree = last_completed;
    last_completed = 0;
    if (s.is_operator) {
      stack.push_back({2, 1});
    } else {
      // An operand completes the innermost operator if it was its last need,
      // and completion cascades upward.
      int finished_nodes = 0;
      while (!stack.empty()) {
        Open& top = stack.back();
        top.nodes += finished_nodes;
        if (--top.need > 0) break;
        finished_nodes = top.nodes;
        last_completed = finished_nodes;
        ++s.completions;
        stack.pop_back();
      }
    }
    out.push_back(s);
  }
  return out;
}

std::vector<BrevoStateFeatures> brevo_state_features(const Graph& graph, const std::string& query,
                                                     const std::vector<std::string>& answer) {
  const int q = graph.index_of(query);
  const auto preds = graph.predecessors();
  const auto succs = graph.successors();
  const int n = static_cast<int>(graph.size());

  // Shortest distance to the query along successor edges (reverse BFS).
  std::vector<int> dist(n, -1);
  std::deque<int> bfs{q};
  dist[q] = 0;
  while (!bfs.empty()) {
    const int v = bfs.front();
    bfs.pop_front();
    for (int u : preds[v])
      if (dist[u] < 0) {
        dist[u] = dist[v] + 1;
        bfs.push_back(u);
      }
  }
  std::vector<int> in_deg(n), out_deg(n);
  for (int v = 0; v < n; ++v) {
    in_deg[v] = static_cast<int>(preds[v].size());
    out_deg[v] = static_cast<int>(succs[v].size());
  }
  int total = 0;
  for (int v = 0; v < n; ++v) total += (dist[v] > 0);

  std::vector<BrevoStateFeatures> out;
  std::vector<char> visited(n, 0), emitted(n, 0);
  // Recursion frames: node and index of the next child to visit.
  struct Frame {
    int node;
    std::size_t next;
  };
  std::vector<Frame> path;
  // Distinct nodes: a child pending under several open frames counts once.
  auto frontier = [&] {
    std::set<int> f;
    for (const Frame& fr : path) {
      f.insert(fr.node);
      for (std::size_t c = fr.next; c < preds[fr.node].size(); ++c)
        if (!visited[preds[fr.node][c]]) f.insert(preds[fr.node][c]);
    }
    return static_cast<int>(f.size());
  };
  std::function<void(int, int)> dfs = [&](int v, int depth) {
    visited[v] = 1;
    path.push_back({v, 0});
    while (path.back().next < preds[v].size()) {
      const int u = preds[v][path.back().next++];
      if (!visited[u]) dfs(u, depth + 1);
    }
    path.pop_back();
    if (v == q) return;
    emitted[v] = 1;
    BrevoStateFeatures f;
    f.node = graph.names[v];
    f.graph_size = n;
    f.out_degree = out_deg[v];
    f.in_degree = in_deg[v];
    f.remaining = total - static_cast<int>(out.size()) - 1;
    f.dfs_depth = depth;
    f.frontier = frontier();
    for (int w : succs[v]) {
      if (dist[w] < 0) continue;  // outside the dependency set and not the query
      bool ready = true;
      for (int u : preds[w]) ready = ready && emitted[u];
      f.newly_enabled += ready;
    }
    f.distance_to_query = dist[v];
    out.push_back(f);
  };
  dfs(q, 0);

  if (out.size() != answer.size()) throw DataError("answer length differs from the reference traversal");
  for (std::size_t k = 0; k < out.size(); ++k)
    if (out[k].node != answer[k]) throw DataError("answer differs from the reference traversal at position " + std::to_string(k));
  return out;
}

const std::vector<std::string>& brevo_feature_names() {
  static const std::vector<std::string> names{"graph_size",         "out_degree", "in_degree",     "remaining",
                                              "dfs_depth",          "frontier",   "newly_enabled", "distance_to_query"};
  return names;
}

std::vector<double> brevo_feature_row(const BrevoStateFeatures& f) {
  return {static_cast<double>(f.graph_size), static_cast<double>(f.out_degree),   static_cast<double>(f.in_degree),
          static_cast<double>(f.remaining),  static_cast<double>(f.dfs_depth),    static_cast<double>(f.frontier),
          static_cast<double>(f.newly_enabled), static_cast<double>(f.distance_to_query)};
}

json to_json(const ManoParseState& s) {
  return {{"token", s.token},
          {"operator", s.is_operator},
          {"d", s.stack_depth},
          {"r", s.remaining_operands},
          {"s", s.completed_subtree},
          {"completions", s.completions}};
}

json to_json(const BrevoStateFeatures& f) {
  json j{{"node", f.node}};
  const auto row = brevo_feature_row(f);
  for (std::size_t k = 0; k < row.size(); ++k) j[brevo_feature_names()[k]] = row[k];
  return j;
}

}  // namespace anira::analysis

// SPDX-License-Identifier: Apache-2.0
//
// Graph tasks. BREVO: list every node a query depends on in a random DAG,
// in DFS postorder. DEPO: follow a directed cycle K steps from several
// start nodes. Node names are single tokens "v00".."v49".
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anira/rng.hpp"
#include "anira/tasks/task.hpp"

namespace anira {

inline constexpr int kNodePoolSize = 50;
std::string node_name(int index);

/// Directed graph over named nodes; edges are (from, to) node indices.
struct Graph {
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> edges;

  std::size_t size() const { return names.size(); }
  int index_of(const std::string& name) const;  // DataError if absent
  /// Adjacency lists sorted by node name.
  std::vector<std::vector<int>> predecessors() const;
  std::vector<std::vector<int>> successors() const;

  nlohmann::json to_json() const;
  static Graph from_json(const nlohmann::json& j);
};

namespace brevo {

inline constexpr int kMaxDegree = 4;

/// <pad> <bos> <ans> <eoa> <q> v00..v49
const Vocabulary& vocabulary();

/// Random topological order, then for each node 1..min(4, i) parents drawn
/// among earlier nodes whose out-degree is still below the cap.
Graph random_dag(int nodes, Rng& rng);

/// Dependencies of `query` in DFS postorder over predecessor edges, children
/// visited in name order, query excluded.
std::vector<int> solve(const Graph& graph, int query);
std::vector<std::string> solve(const Graph& graph, const std::string& query);

/// <bos> (u v)* <q> query <ans> | deps... <eoa>
TaskInstance generate(int nodes, std::uint64_t seed);

}  // namespace brevo

namespace depo {

inline constexpr int kMaxQueries = 10;
inline constexpr int kMaxSteps = 16;

/// <pad> <bos> <ans> <eoa> v00..v49 <query-01>..<query-16>
const Vocabulary& vocabulary();

/// Node reached after `steps` successor moves from `start`; throws DataError
/// if some node on the way has no unique successor.
int walk(const Graph& graph, int start, int steps);

/// <bos> (u v)* | (<query-K> q <ans> y <eoa>)*, supervision on y only.
TaskInstance generate(int nodes, int steps, std::uint64_t seed);

}  // namespace depo

}  // namespace anira

// SPDX-License-Identifier: Apache-2.0
//
// Per-token execution-state features of the reference algorithms: a prefix
// expression stack parser for MANO and an instrumented DFS for BREVO.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "anira/tasks/graph_tasks.hpp"

namespace anira::analysis {

struct ManoParseState {
  std::string token;
  bool is_operator = false;
  int stack_depth = 0;          // d_t: open operators before the token
  int remaining_operands = 0;   // r_t: operands the innermost open operator still needs (0 at the root)
  int completed_subtree = 0;    // s_t: operator nodes of the largest subtree completed by the previous token
  int completions = 0;          // operator subtrees completed by this token
};

/// Throws ParseError on malformed expressions.
std::vector<ManoParseState> mano_parse_state(const std::vector<std::string>& expression);

struct BrevoStateFeatures {
  std::string node;
  int graph_size = 0;          // N
  int out_degree = 0;          // hub out-degree of the emitted node
  int in_degree = 0;
  int remaining = 0;           // dependencies not yet emitted after this token
  int dfs_depth = 0;           // recursion depth of the emitted node (query at 0)
  int frontier = 0;            // distinct nodes on the open path or pending under it
  int newly_enabled = 0;       // dependents whose last unmet dependency this was
  int distance_to_query = 0;   // shortest directed path length to the query
};

/// Replays the reference DFS and records features at every emitted node.
/// Throws DataError when `answer` is not the oracle output.
std::vector<BrevoStateFeatures> brevo_state_features(const Graph& graph, const std::string& query,
                                                     const std::vector<std::string>& answer);

/// Feature names in the column order of brevo_feature_row().
const std::vector<std::string>& brevo_feature_names();
std::vector<double> brevo_feature_row(const BrevoStateFeatures& f);

nlohmann::json to_json(const ManoParseState& s);
nlohmann::json to_json(const BrevoStateFeatures& f);

}  // namespace anira::analysis

// SPDX-License-Identifier: Apache-2.0
//
// Task-independent entry points: dataset generation from a few settings and
// answer oracles that re-derive answers from an instance payload.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/task.hpp"

namespace anira {

struct GenerationSpec {
  TaskId task = TaskId::mano;
  std::vector<int> knobs;  // cycled over instances; ignored for lano
  std::size_t count = 0;
  std::uint64_t seed = 0;
  int depo_nodes = 20;              // cycle length N for depo
  std::string grammar_text;         // lano; empty selects the default grammar
  std::size_t lano_max_tokens = 48;
};

/// Vocabulary of a task (lano: of the spec's grammar).
Vocabulary task_vocabulary(TaskId task, const pcfg::Grammar* grammar = nullptr);

/// Instance i uses knob knobs[i % size] and seed instance_seed(seed, i).
Dataset generate_dataset(const GenerationSpec& spec);

/// Answer ids recomputed from the payload by the task's oracle.
std::vector<int> oracle_answer(const TaskInstance& inst, const Vocabulary& vocab);
/// Difficulty knob implied by the payload.
int payload_knob(const TaskInstance& inst);

}  // namespace anira

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "anira/tasks/vocab.hpp"

namespace anira {

enum class TaskId { mano, brevo, depo, lano };

std::string to_string(TaskId task);
/// Throws DataError naming the offending id.
TaskId parse_task_id(const std::string& text);

/// One sequence: prompt_ids then answer_ids form the full token stream.
struct TaskInstance {
  TaskId task = TaskId::mano;
  int knob = 0;
  std::uint64_t seed = 0;
  std::vector<int> prompt_ids;
  std::vector<int> answer_ids;
  /// Per answer token: 1 if supervised. Empty means every answer token is.
  std::vector<std::uint8_t> supervised;
  nlohmann::json payload;

  bool is_supervised(std::size_t answer_index) const {
    return supervised.empty() || supervised[answer_index] != 0;
  }
  std::size_t length() const { return prompt_ids.size() + answer_ids.size(); }
};

struct Dataset {
  TaskId task = TaskId::mano;
  Vocabulary vocab;
  nlohmann::json meta = nlohmann::json::object();  // generator settings, grammar text, ...
  std::vector<TaskInstance> instances;
};

nlohmann::json instance_to_json(const TaskInstance& inst, const std::string& vocab_version);
/// Throws DataError on missing fields or an unknown task id.
TaskInstance instance_from_json(const nlohmann::json& j);

/// JSONL: one header line {"header": ...} followed by one instance per line.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
/// Writes through a temporary file renamed into place on success.
void write_dataset_file(const std::string& path, const Dataset& data);
Dataset read_dataset_file(const std::string& path);

/// Seed of instance `index` in a dataset generated from `run_seed`.
std::uint64_t instance_seed(std::uint64_t run_seed, std::uint64_t index);

}  // namespace anira

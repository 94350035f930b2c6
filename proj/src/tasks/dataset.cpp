// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <istream>
#include <ostream>

#include "anira/rng.hpp"
#include "anira/tasks/task.hpp"
#include "anira/util/atomic_file.hpp"

namespace anira {

using nlohmann::json;

std::string to_string(TaskId task) {
  switch (task) {
    case TaskId::mano: return "mano";
    case TaskId::brevo: return "brevo";
    case TaskId::depo: return "depo";
    case TaskId::lano: return "lano";
  }
  return "?";
}

TaskId parse_task_id(const std::string& text) {
  if (text == "mano") return TaskId::mano;
  if (text == "brevo") return TaskId::brevo;
  if (text == "depo") return TaskId::depo;
  if (text == "lano") return TaskId::lano;
  throw DataError("unknown task id '" + text + "' (expected mano, brevo, depo or lano)");
}

json instance_to_json(const TaskInstance& inst, const std::string& vocab_version) {
  json j;
  j["task"] = to_string(inst.task);
  j["knob"] = inst.knob;
  j["seed"] = inst.seed;
  j["prompt_ids"] = inst.prompt_ids;
  j["answer_ids"] = inst.answer_ids;
  if (!inst.supervised.empty()) j["supervised"] = inst.supervised;
  j["payload"] = inst.payload;
  j["vocab_version"] = vocab_version;
  return j;
}

TaskInstance instance_from_json(const json& j) {
  TaskInstance inst;
  try {
    inst.task = parse_task_id(j.at("task").get<std::string>());
    inst.knob = j.at("knob").get<int>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.prompt_ids = j.at("prompt_ids").get<std::vector<int>>();
    inst.answer_ids = j.at("answer_ids").get<std::vector<int>>();
    if (j.contains("supervised")) inst.supervised = j.at("supervised").get<std::vector<std::uint8_t>>();
    inst.payload = j.value("payload", json::object());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed instance: ") + e.what());
  }
  if (!inst.supervised.empty() && inst.supervised.size() != inst.answer_ids.size()) {
    throw DataError("instance supervision mask length differs from answer length");
  }
  return inst;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  const std::string version = data.vocab.version();
  json header;
  header["header"] = true;
  header["task"] = to_string(data.task);
  header["vocab"] = data.vocab.tokens();
  header["vocab_version"] = version;
  header["count"] = data.instances.size();
  header["meta"] = data.meta;
  out << header.dump() << '\n';
  for (const auto& inst : data.instances) out << instance_to_json(inst, version).dump() << '\n';
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::string version;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + "invalid JSON (" + e.what() + ")");
    }
    try {
      if (!have_header) {
        if (!j.value("header", false)) throw DataError("expected a dataset header line");
        data.task = parse_task_id(j.at("task").get<std::string>());
        data.vocab = Vocabulary(j.at("vocab").get<std::vector<std::string>>());
        version = j.at("vocab_version").get<std::string>();
        if (version != data.vocab.version()) throw DataError("vocabulary fingerprint does not match its token list");
        data.meta = j.value("meta", json::object());
        have_header = true;
        continue;
      }
      TaskInstance inst = instance_from_json(j);
      if (inst.task != data.task) throw DataError("instance task differs from dataset task");
      if (j.value("vocab_version", version) != version) throw DataError("instance vocabulary version mismatch");
      for (int id : inst.prompt_ids) data.vocab.token(id);
      for (int id : inst.answer_ids) data.vocab.token(id);
      data.instances.push_back(std::move(inst));
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(where + e.what());
    } catch (const json::exception& e) {
      throw ParseError(where + e.what());
    }
  }
  if (!have_header) throw ParseError("dataset is empty (no header line)");
  return data;
}

void write_dataset_file(const std::string& path, const Dataset& data) {
  write_atomically(path, [&](std::ostream& out) { write_dataset(out, data); });
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  try {
    return read_dataset(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::uint64_t instance_seed(std::uint64_t run_seed, std::uint64_t index) {
  return splitmix64(splitmix64(run_seed) ^ (index * 0x9e3779b97f4a7c15ULL + 1));
}

}  // namespace anira

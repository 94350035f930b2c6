// SPDX-License-Identifier: Apache-2.0
#include "anira/tasks/suite.hpp"

#include "anira/error.hpp"
#include "anira/tasks/graph_tasks.hpp"
#include "anira/tasks/lano.hpp"
#include "anira/tasks/mano.hpp"

namespace anira {

using nlohmann::json;

Vocabulary task_vocabulary(TaskId task, const pcfg::Grammar* grammar) {
  switch (task) {
    case TaskId::mano: return mano::vocabulary();
    case TaskId::brevo: return brevo::vocabulary();
    case TaskId::depo: return depo::vocabulary();
    case TaskId::lano: return lano::vocabulary(grammar ? *grammar : pcfg::Grammar::default_grammar());
  }
  throw ContractError("unknown task");
}

Dataset generate_dataset(const GenerationSpec& spec) {
  if (spec.task != TaskId::lano && spec.knobs.empty()) throw ContractError("generation needs at least one knob value");
  std::optional<pcfg::Grammar> grammar;
  if (spec.task == TaskId::lano)
    grammar = spec.grammar_text.empty() ? pcfg::Grammar::default_grammar() : pcfg::Grammar::parse(spec.grammar_text);
  Dataset data;
  data.task = spec.task;
  data.vocab = task_vocabulary(spec.task, grammar ? &*grammar : nullptr);
  data.meta = {{"seed", spec.seed}, {"count", spec.count}, {"knobs", spec.knobs}};
  if (spec.task == TaskId::depo) data.meta["depo_nodes"] = spec.depo_nodes;
  if (grammar) {
    data.meta["grammar"] = grammar->to_text();
    data.meta["lano_max_tokens"] = spec.lano_max_tokens;
  }
  lano::Options lano_options;
  lano_options.max_tokens = spec.lano_max_tokens;
  data.instances.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::uint64_t seed = instance_seed(spec.seed, i);
    const int knob = spec.knobs.empty() ? 0 : spec.knobs[i % spec.knobs.size()];
    switch (spec.task) {
      case TaskId::mano: data.instances.push_back(mano::generate(knob, seed)); break;
      case TaskId::brevo: data.instances.push_back(brevo::generate(knob, seed)); break;
      case TaskId::depo: data.instances.push_back(depo::generate(spec.depo_nodes, knob, seed)); break;
      case TaskId::lano: data.instances.push_back(lano::generate(*grammar, data.vocab, seed, lano_options)); break;
    }
  }
  return data;
}

std::vector<int> oracle_answer(const TaskInstance& inst, const Vocabulary& vocab) {
  std::vector<int> out;
  try {
    switch (inst.task) {
      case TaskId::mano: {
        const int value = mano::evaluate(split_words(inst.payload.at("expression").get<std::string>()));
        out = {vocab.id(std::to_string(value))};
        break;
      }
      case TaskId::brevo: {
        const Graph g = Graph::from_json(inst.payload);
        for (const auto& name : brevo::solve(g, inst.payload.at("query").get<std::string>())) out.push_back(vocab.id(name));
        break;
      }
      case TaskId::depo: {
        const Graph g = Graph::from_json(inst.payload);
        const int k = inst.payload.at("k").get<int>();
        for (const auto& q : inst.payload.at("queries")) {
          const std::string start = q.at(0).get<std::string>();
          const int y = depo::walk(g, g.index_of(start), k);
          for (int id : {vocab.id(tokens::query_k(k)), vocab.id(start), vocab.ans(), vocab.id(g.names[y]), vocab.eoa()})
            out.push_back(id);
        }
        return out;  // each block carries its own <eoa>
      }
      case TaskId::lano: {
        const auto words = inst.payload.at("string").get<std::vector<std::string>>();
        const auto prefix = inst.payload.at("prefix").get<std::size_t>();
        for (std::size_t i = prefix; i < words.size(); ++i) out.push_back(vocab.id(words[i]));
        break;
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed payload: ") + e.what());
  }
  out.push_back(vocab.eoa());
  return out;
}

int payload_knob(const TaskInstance& inst) {
  try {
    switch (inst.task) {
      case TaskId::mano: return mano::operator_count(split_words(inst.payload.at("expression").get<std::string>()));
      case TaskId::brevo: return static_cast<int>(Graph::from_json(inst.payload).size());
      case TaskId::depo: return inst.payload.at("k").get<int>();
      case TaskId::lano: return 0;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed payload: ") + e.what());
  }
  return 0;
}

}  // namespace anira

// SPDX-License-Identifier: Apache-2.0
#include "anira/tasks/lano.hpp"

#include <algorithm>

#include "anira/error.hpp"

namespace anira::lano {

Vocabulary vocabulary(const pcfg::Grammar& grammar) {
  Vocabulary v;
  for (const auto& t : grammar.terminals()) v.add(t);
  return v;
}

TaskInstance generate(const pcfg::Grammar& grammar, const Vocabulary& vocab, std::uint64_t seed,
                      const Options& options) {
  Rng rng(seed);
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    pcfg::Derivation d = grammar.sample(rng, options.max_tokens + 1);
    if (d.truncated || d.tokens.size() > options.max_tokens) continue;
    const std::size_t longest = std::min(options.max_prefix, d.tokens.size() - 1);
    const auto prefix = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(longest)));
    TaskInstance inst;
    inst.task = TaskId::lano;
    inst.knob = 0;
    inst.seed = seed;
    inst.prompt_ids.push_back(vocab.bos());
    for (std::size_t i = 0; i < prefix; ++i) inst.prompt_ids.push_back(vocab.id(d.tokens[i]));
    inst.prompt_ids.push_back(vocab.ans());
    for (std::size_t i = prefix; i < d.tokens.size(); ++i) inst.answer_ids.push_back(vocab.id(d.tokens[i]));
    inst.answer_ids.push_back(vocab.eoa());
    inst.payload = {{"string", d.tokens}, {"tree", d.tree}, {"prefix", prefix}, {"depth", d.depth}};
    return inst;
  }
  throw DataError("no derivation of at most " + std::to_string(options.max_tokens) + " tokens after " +
                  std::to_string(options.max_attempts) + " attempts");
}

}  // namespace anira::lano

// SPDX-License-Identifier: Apache-2.0
//
// Language modelling on strings sampled from a PCFG:
//   <bos> prefix <ans> | continuation <eoa>
// with a prefix of at most a few tokens.
#pragma once

#include <cstdint>

#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/task.hpp"

namespace anira::lano {

struct Options {
  std::size_t max_tokens = 48;    // longer derivations are resampled
  std::size_t max_prefix = 2;     // prompt prefix length drawn from 0..max_prefix
  int max_attempts = 1000;
};

/// Control tokens followed by the grammar's terminals.
Vocabulary vocabulary(const pcfg::Grammar& grammar);

/// Throws DataError if no derivation within max_tokens is found.
TaskInstance generate(const pcfg::Grammar& grammar, const Vocabulary& vocab, std::uint64_t seed,
                      const Options& options = {});

}  // namespace anira::lano

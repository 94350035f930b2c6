// SPDX-License-Identifier: Apache-2.0
//
// Small models and random batches shared by the model and inference tests.
#pragma once

#include "anira/model.hpp"
#include "anira/rng.hpp"

namespace anira::testing {

inline ModelConfig small_config(DeciderKind kind, std::size_t depth = 4, std::uint64_t seed = 7) {
  ModelConfig c;
  c.depth = depth;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = 13;
  c.max_seq_len = 24;
  c.decider = kind;
  c.init_std = 0.2;
  c.seed = seed;
  return c;
}

/// Fully unpadded batch of random tokens with every row supervised.
inline Batch random_batch(Rng& rng, std::size_t batch, std::size_t seq, std::size_t vocab) {
  Batch b;
  b.batch = batch;
  b.seq = seq;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    b.inputs.push_back(static_cast<int>(rng.integer(0, static_cast<std::int64_t>(vocab) - 1)));
    b.targets.push_back(static_cast<int>(rng.integer(0, static_cast<std::int64_t>(vocab) - 1)));
    b.answer_mask.push_back(1);
    b.token_mask.push_back(1);
  }
  b.knobs.assign(batch, 0);
  return b;
}

inline std::vector<std::size_t> random_depths(Rng& rng, std::size_t n, std::size_t depth) {
  std::vector<std::size_t> d(n);
  for (auto& v : d) v = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(depth)));
  return d;
}

inline ForwardOptions forced(const std::vector<std::size_t>& depths) {
  ForwardOptions o = ForwardOptions::infer(DepthRule::modal());
  o.forced_depths = depths;
  return o;
}

}  // namespace anira::testing

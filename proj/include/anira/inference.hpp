// SPDX-License-Identifier: Apache-2.0
//
// Token-by-token decoding with an allocation-aware KV cache. Each token runs
// the recurrent block only up to its own exit depth; later tokens that attend
// to it at a deeper iteration read its deepest stored entry.
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "anira/exit_depth.hpp"
#include "anira/model.hpp"
#include "anira/tasks/task.hpp"

namespace anira {

class CacheMissError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Keys (rotated) and values of past tokens. Prelude and coda layers keep one
/// entry per token; the recurrent block keeps entries for depths 1..d_i*.
template <typename Real>
class KvCache {
 public:
  KvCache(std::size_t prelude_layers, std::size_t coda_layers, std::size_t width);

  std::size_t tokens() const { return exit_depths_.size(); }
  std::size_t width() const { return width_; }

  enum class Role { prelude, coda };
  void append_fixed(Role role, std::size_t layer, std::vector<Real> key, std::vector<Real> value);
  const Real* fixed_key(Role role, std::size_t layer, std::size_t token) const;
  const Real* fixed_value(Role role, std::size_t layer, std::size_t token) const;

  /// Opens the recurrent record of the next token.
  void begin_token();
  /// Appends the next-depth entry of the newest token.
  void push_recurrent(std::vector<Real> key, std::vector<Real> value);
  /// Drops the newest token's entries deeper than `depth`.
  void truncate_newest(std::size_t depth);

  /// Entry at depth min(d, d_i*). Throws CacheMissError for unknown tokens.
  const Real* recurrent_key(std::size_t token, std::size_t depth) const;
  const Real* recurrent_value(std::size_t token, std::size_t depth) const;
  std::size_t stored_depth(std::size_t token) const;
  /// Resolved depth of the entry a lookup at `depth` returns.
  std::size_t lookup_depth(std::size_t token, std::size_t depth) const;

  /// Recurrent entries stored in total, i.e. sum of d_i*.
  std::size_t recurrent_entries() const;

 private:
  std::size_t check_token(std::size_t token) const;

  std::size_t width_;
  std::vector<std::vector<std::vector<Real>>> prelude_k_, prelude_v_, coda_k_, coda_v_;
  std::vector<std::vector<std::vector<Real>>> rec_k_, rec_v_;  // [token][depth-1]
  std::vector<std::size_t> exit_depths_;
};

struct ComputeReport {
  std::size_t depth = 0;  // D
  std::vector<std::size_t> depths;
  std::size_t cost_exec = 0;            // sum_d |A_d|
  std::size_t decider_evaluations = 0;  // count of decider calls on active tokens
  double decider_unit_cost = 0.0;       // multiply-adds per decider call
  double cost_dec = 0.0;
  double mean_depth = 0.0;
  double savings_ratio = 0.0;  // mean depth / D
  std::size_t kv_entries = 0;  // recurrent entries

  /// Cost_exec counted over active sets A_d = {i : d_i* >= d}.
  static ComputeReport from_depths(const std::vector<std::size_t>& depths, std::size_t max_depth,
                                   std::size_t decider_evaluations, double decider_unit_cost);
};

/// Multiply-adds of one decider evaluation for a config.
double decider_unit_cost(const ModelConfig& config);

template <typename Real>
struct DecodeStep {
  std::vector<Real> logits;
  std::size_t depth = 0;
  std::size_t decider_evaluations = 0;
  std::size_t iterations = 0;  // recurrent iterations executed
};

template <typename Real>
class Decoder {
 public:
  Decoder(Model<Real>& model, DepthRule rule);

  /// Processes one token at the next position. forced_depth replaces the
  /// decider's choice (test hook).
  DecodeStep<Real> step(int token, std::optional<std::size_t> forced_depth = std::nullopt);

  const KvCache<Real>& cache() const { return cache_; }
  const std::vector<std::size_t>& depths() const { return depths_; }
  std::size_t decider_evaluations() const { return decider_evaluations_; }

 private:
  struct RowLayer {
    std::vector<Real> out, key, value;
  };
  RowLayer run_layer(DecoderLayer<Real>& layer, const std::vector<Real>& x, std::size_t pos,
                     const std::vector<const Real*>& past_keys, const std::vector<const Real*>& past_values);

  Model<Real>& model_;
  DepthRule rule_;
  KvCache<Real> cache_;
  std::vector<std::size_t> depths_;
  std::size_t decider_evaluations_ = 0;
};

template <typename Real>
struct Generation {
  std::vector<int> tokens;  // generated, including <eoa> when produced
  std::vector<std::size_t> depths;         // every processed token
  std::vector<std::size_t> answer_depths;  // positions predicting an answer token
  ComputeReport report;
};

/// Greedy decoding from a prompt until `stop_token` or max_new tokens.
template <typename Real>
Generation<Real> generate(Model<Real>& model, const std::vector<int>& prompt, std::size_t max_new, DepthRule rule,
                          int stop_token);

struct InstanceScore {
  bool correct = false;
  std::vector<std::size_t> answer_depths;  // depths at supervised answer positions
  std::vector<std::size_t> depths;         // every input position
  double answer_mean_depth() const;
  double mean_depth() const;
};

/// Exact-match scoring by argmax under teacher forcing, batched through the
/// unrolled forward (or the cached decoder when the rule needs it).
template <typename Real>
std::vector<InstanceScore> score_teacher_forced(Model<Real>& model, const std::vector<const TaskInstance*>& instances,
                                                int pad_id, DepthRule rule, std::size_t batch_size = 64);

/// Exact-match scoring by greedy generation through the cached decoder.
template <typename Real>
InstanceScore score_generated(Model<Real>& model, const TaskInstance& instance, DepthRule rule, int stop_token);

struct SweepPoint {
  double threshold = 0.0;
  double accuracy = 0.0;
  double mean_depth = 0.0;  // answer-token mean depth
  std::size_t instances = 0;
};

/// One (accuracy, answer-token mean depth) point per CDF threshold.
template <typename Real>
std::vector<SweepPoint> threshold_sweep(Model<Real>& model, const std::vector<const TaskInstance*>& instances,
                                        int pad_id, const std::vector<double>& thresholds, std::size_t batch_size = 64);

/// Pads instances into a batch; targets are the next tokens, the answer mask
/// marks positions whose target is a supervised answer token.
Batch make_batch(const std::vector<const TaskInstance*>& instances, int pad_id);

}  // namespace anira

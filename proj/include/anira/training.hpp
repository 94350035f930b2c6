// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "anira/checkpoint.hpp"
#include "anira/exit_depth.hpp"
#include "anira/model.hpp"
#include "anira/objective.hpp"
#include "anira/rng.hpp"
#include "anira/tasks/task.hpp"

namespace anira {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t warmup = 1000;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double gamma = 0.1;
  double prior_base = 1.25;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
  AdamWConfig adam;
  std::size_t log_every = 1;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation
  std::size_t eval_batch = 64;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  DepthRule eval_rule = DepthRule::modal();

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct KnobStats {
  std::size_t count = 0;
  std::size_t correct = 0;
  double depth_sum = 0.0;  // sum over instances of the answer-token mean depth

  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
  double mean_depth() const { return count ? depth_sum / static_cast<double>(count) : 0.0; }
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  LossReport loss;
  double grad_norm = 0.0;
  std::map<int, KnobStats> knobs;  // teacher-forced on the training batch, sampled depths

  nlohmann::json to_json() const;
};

/// Held-out evaluation with the inference depth rule, bucketed by knob.
struct EvalReport {
  std::size_t step = 0;
  std::map<int, KnobStats> knobs;

  double accuracy() const;
  double mean_depth() const;
  nlohmann::json to_json() const;
};

template <typename Real>
class Trainer {
 public:
  Trainer(Model<Real>& model, TrainConfig config, const Dataset& train);

  /// One optimisation step on a uniformly sampled batch.
  StepMetrics step();
  EvalReport evaluate(const std::vector<const TaskInstance*>& instances);

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return config_; }
  AdamW<Real>& optimizer() { return optimizer_; }

  /// Parameters, AdamW moments, RNG streams and the step counter.
  Checkpoint checkpoint(nlohmann::json extra = nlohmann::json::object());
  void restore(const Checkpoint& ckp);

 private:
  Model<Real>& model_;
  TrainConfig config_;
  const Dataset& train_;
  int pad_id_;
  DepthPrior prior_;
  AdamW<Real> optimizer_;
  Rng data_rng_, gumbel_rng_;
  std::size_t step_ = 0;
};

}  // namespace anira

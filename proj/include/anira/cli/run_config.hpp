// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value run configuration with section prefixes (run., data.,
// model., train., eval., analyze.). Later assignments override earlier ones,
// so flag overrides are applied after the file.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anira/model.hpp"
#include "anira/tasks/task.hpp"
#include "anira/training.hpp"

namespace anira::cli {

class RunConfig {
 public:
  /// Lines "key = value"; '#' starts a comment. Unknown keys are a
  /// ContractError, malformed lines a ParseError.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  /// "key=value" override; ContractError for unknown keys.
  void apply(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated reals.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  /// Sorted "key = value" lines; parse(to_text()) reproduces the config.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

/// "3-5" or "3,4,7" (mixed forms allowed); ContractError on empty or
/// descending ranges.
std::vector<int> parse_knobs(const std::string& text);

/// Per-task defaults for the regularizer weight and prior base.
std::pair<double, double> default_gamma_base(TaskId task);

/// Model settings from model.* keys; vocab size from the dataset.
ModelConfig resolve_model_config(RunConfig& config, std::size_t vocab_size);
/// Training settings from train.* keys, filling task defaults.
TrainConfig resolve_train_config(RunConfig& config, TaskId task, DeciderKind decider);

/// Output directory: run.out, made relative to $ANIRA_OUTPUT_ROOT when set.
std::string resolve_output_dir(const RunConfig& config);

}  // namespace anira::cli

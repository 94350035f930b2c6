// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the anira executable. Each command reads a
// resolved RunConfig, writes the config into its output directory first,
// writes every output through a temporary file, and returns a JSON summary.
#pragma once

#include <string>

#include <json.hpp>

#include "anira/cli/run_config.hpp"

namespace anira::cli {

/// data.task, data.knobs, data.count, data.seed -> data.out (default <out>/data.jsonl).
/// Summary carries the knob histogram.
nlohmann::json cmd_gen(RunConfig config);

/// data.train (+ data.eval) -> checkpoints, metrics.jsonl, final.ckpt.
/// run.resume continues from a checkpoint and its metric stream.
nlohmann::json cmd_train(RunConfig config);

/// eval.checkpoint, eval.data -> eval.jsonl (per instance), complexity.csv.
/// eval.thresholds adds a sweep (online decider only).
nlohmann::json cmd_eval(RunConfig config);

/// eval.checkpoint, eval.data, eval.thresholds (default 0.1..0.9) -> pareto.csv/json.
nlohmann::json cmd_sweep(RunConfig config);

/// analyze.kind in {spearman-proxies, brevo-regression, mano-parse-state, dynamics, pareto}.
nlohmann::json cmd_analyze(RunConfig config);

/// Writes `text` to `path` through a temporary file.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace anira::cli

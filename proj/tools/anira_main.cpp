// SPDX-License-Identifier: Apache-2.0
//
// anira <gen|train|eval|sweep|analyze> [--config FILE] [--set key=value]...
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
#include <CLI11.hpp>

#include <iostream>

#include "anira/cli/commands.hpp"
#include "anira/error.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override key=value (repeatable)");
}

/// Convenience flag mapped onto a config key.
void add_key(CLI::App* cmd, const std::string& flag, const std::string& key, std::vector<std::pair<std::string, std::string>>& sink,
             const std::string& help) {
  cmd->add_option_function<std::string>(flag, [&sink, key](const std::string& v) { sink.emplace_back(key, v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-depth recurrent transformer: data, training, evaluation and analysis"};
  app.require_subcommand(1);
  CommonArgs args;
  std::vector<std::pair<std::string, std::string>> flags;

  auto* gen = app.add_subcommand("gen", "generate a task dataset");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* sweep = app.add_subcommand("sweep", "CDF-threshold sweep of an online checkpoint");
  auto* analyze = app.add_subcommand("analyze", "analysis reports");
  for (auto* cmd : {gen, train, eval, sweep, analyze}) {
    add_common(cmd, args);
    add_key(cmd, "-o,--out", "run.out", flags, "output directory (relative to $ANIRA_OUTPUT_ROOT)");
    add_key(cmd, "--seed", "run.seed", flags, "run seed");
  }
  add_key(gen, "--task", "data.task", flags, "mano, brevo, depo or lano");
  add_key(gen, "--knobs", "data.knobs", flags, "difficulty values, e.g. 3-5 or 2,4,8");
  add_key(gen, "-n,--count", "data.count", flags, "number of instances");
  add_key(gen, "--file", "data.out", flags, "dataset path");
  add_key(gen, "--grammar", "data.grammar", flags, "grammar file for lano");
  add_key(train, "--data", "data.train", flags, "training dataset");
  add_key(train, "--eval-data", "data.eval", flags, "held-out dataset");
  add_key(train, "--steps", "train.steps", flags, "optimisation steps");
  add_key(train, "--decider", "model.decider", flags, "early or online");
  add_key(train, "--resume", "run.resume", flags, "checkpoint to resume from");
  for (auto* cmd : {eval, sweep}) {
    add_key(cmd, "--checkpoint", "eval.checkpoint", flags, "checkpoint");
    add_key(cmd, "--data", "eval.data", flags, "dataset");
    add_key(cmd, "--threshold", "eval.thresholds", flags, "comma-separated CDF thresholds");
  }
  add_key(eval, "--rule", "eval.rule", flags, "modal, median or threshold:c");
  add_key(eval, "--mode", "eval.mode", flags, "teacher or generate");
  std::string kind;
  analyze->add_option("kind", kind, "spearman-proxies, brevo-regression, mano-parse-state, dynamics or pareto");
  add_key(analyze, "--checkpoint", "analyze.checkpoint", flags, "checkpoint");
  add_key(analyze, "--data", "analyze.data", flags, "dataset");
  add_key(analyze, "--metrics", "analyze.metrics", flags, "metrics JSONL");
  add_key(analyze, "--sweep", "analyze.sweep", flags, "sweep JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    using anira::cli::RunConfig;
    RunConfig config = args.config_path.empty() ? RunConfig{} : RunConfig::load(args.config_path);
    for (const auto& o : args.overrides) config.apply(o);
    for (const auto& [k, v] : flags) config.set(k, v);
    if (!kind.empty()) config.set("analyze.kind", kind);

    nlohmann::json summary;
    if (*gen) summary = anira::cli::cmd_gen(config);
    else if (*train) summary = anira::cli::cmd_train(config);
    else if (*eval) summary = anira::cli::cmd_eval(config);
    else if (*sweep) summary = anira::cli::cmd_sweep(config);
    else summary = anira::cli::cmd_analyze(config);
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const anira::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(anira::ErrorKind::data);
  }
}

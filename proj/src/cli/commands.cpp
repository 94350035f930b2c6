// SPDX-License-Identifier: Apache-2.0
#include "anira/cli/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "anira/analysis/probes.hpp"
#include "anira/analysis/reports.hpp"
#include "anira/checkpoint.hpp"
#include "anira/error.hpp"
#include "anira/inference.hpp"
#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/suite.hpp"
#include "anira/training.hpp"
#include "anira/util/atomic_file.hpp"

namespace anira::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text_file(const std::string& path, const std::string& text) {
  write_atomically(path, [&](std::ostream& out) { out << text; });
}

namespace {

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string require(const RunConfig& c, const std::string& key) {
  if (!c.has(key) || c.get(key).empty()) throw ContractError("missing required setting " + key);
  return c.get(key);
}

/// Creates the output directory and records the resolved config in it.
std::string prepare_output(const RunConfig& c) {
  const std::string dir = resolve_output_dir(c);
  fs::create_directories(dir);
  write_text_file(join(dir, "config.txt"), c.to_text());
  return dir;
}

void write_json(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::size_t longest_input(const Dataset& d) {
  std::size_t n = 0;
  for (const auto& inst : d.instances) n = std::max(n, inst.length() - 1);
  return n;
}

template <typename Fn>
auto with_precision(const ModelConfig& m, Fn&& fn) {
  if (m.precision == "float64") {
    Model<double> model(m);
    return fn(model);
  }
  Model<float> model(m);
  return fn(model);
}

/// Model restored from a checkpoint, dispatched on its precision.
template <typename Fn>
auto with_checkpoint(const Checkpoint& ckp, Fn&& fn) {
  return with_precision(ckp.model_config(), [&](auto& model) {
    restore_parameters(ckp, model);
    return fn(model);
  });
}

void check_vocab(const Checkpoint& ckp, const Dataset& data) {
  if (ckp.header.value("vocab_version", std::string()) != data.vocab.version())
    throw DataError("checkpoint vocabulary does not match the dataset vocabulary");
}

DepthRule default_rule(DeciderKind kind) { return kind == DeciderKind::online ? DepthRule::median() : DepthRule::modal(); }

std::vector<const TaskInstance*> pointers(const Dataset& d) {
  std::vector<const TaskInstance*> out;
  for (const auto& inst : d.instances) out.push_back(&inst);
  return out;
}

// ------------------------------------------------------------------- train

std::vector<json> resumable_metrics(const std::string& dir, std::size_t upto) {
  std::vector<json> kept;
  for (const char* name : {"metrics.jsonl", "metrics.jsonl.partial"}) {
    const std::string path = join(dir, name);
    if (!fs::exists(path)) continue;
    for (auto& r : analysis::read_jsonl(path))
      if (r.value("step", std::size_t{0}) <= upto) kept.push_back(std::move(r));
    break;
  }
  return kept;
}

template <typename Real>
json run_training(Model<Real>& model, RunConfig& config, const Dataset& train, const Dataset* eval,
                  const TrainConfig& tc) {
  const std::string dir = prepare_output(config);
  Trainer<Real> trainer(model, tc, train);
  const json extra{{"config", config.to_text()}};
  std::vector<json> history;
  if (config.has("run.resume") && !config.get("run.resume").empty()) {
    const Checkpoint ckp = read_checkpoint(config.get("run.resume"));
    if (model_config_to_json(ckp.model_config()) != model_config_to_json(model.config()))
      throw DataError("checkpoint model configuration differs from the run configuration");
    trainer.restore(ckp);
    history = resumable_metrics(dir, trainer.steps_done());
  }
  const bool float64 = model.config().precision == "float64";
  const std::string partial = join(dir, "metrics.jsonl.partial");
  std::ofstream metrics(partial, std::ios::trunc);
  if (!metrics) throw DataError("cannot open " + partial);
  for (const auto& r : history) metrics << r.dump() << '\n';

  const auto eval_set = eval ? pointers(*eval) : std::vector<const TaskInstance*>{};
  StepMetrics last;
  json last_eval;
  while (trainer.steps_done() < tc.steps) {
    last = trainer.step();
    if (!std::isfinite(last.loss.total)) throw NumericError("loss became non-finite at step " + std::to_string(last.step));
    if (last.step % tc.log_every == 0) {
      json r = last.to_json();
      r["kind"] = "train";
      metrics << r.dump() << '\n';
    }
    const bool final_step = trainer.steps_done() == tc.steps;
    if (!eval_set.empty() && ((tc.eval_every && last.step % tc.eval_every == 0) || final_step)) {
      last_eval = trainer.evaluate(eval_set).to_json();
      last_eval["kind"] = "eval";
      metrics << last_eval.dump() << '\n';
    }
    metrics.flush();
    if (tc.checkpoint_every && last.step % tc.checkpoint_every == 0)
      write_checkpoint(join(dir, "step-" + std::to_string(last.step) + ".ckpt"), trainer.checkpoint(extra), float64);
  }
  metrics.close();
  const std::string final_path = join(dir, "final.ckpt");
  write_checkpoint(final_path, trainer.checkpoint(extra), float64);
  fs::rename(partial, join(dir, "metrics.jsonl"));
  json summary{{"output", dir}, {"checkpoint", final_path}, {"steps", trainer.steps_done()}};
  if (last.step) summary["final_loss"] = last.loss.total;
  if (!last_eval.is_null()) summary["eval"] = last_eval;
  write_json(join(dir, "summary.json"), summary);
  return summary;
}

// -------------------------------------------------------------------- eval

template <typename Real>
json run_eval(Model<Real>& model, const Dataset& data, DepthRule rule, const std::string& mode, std::size_t batch,
              const std::string& dir) {
  const auto ptrs = pointers(data);
  std::vector<InstanceScore> scores;
  if (mode == "teacher") {
    scores = score_teacher_forced(model, ptrs, data.vocab.pad(), rule, batch);
  } else if (mode == "generate") {
    for (const auto* inst : ptrs) scores.push_back(score_generated(model, *inst, rule, data.vocab.eoa()));
  } else {
    throw ContractError("eval.mode must be teacher or generate");
  }
  std::vector<json> records;
  std::string lines;
  double correct = 0.0, depth = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    json r{{"index", i},
           {"knob", data.instances[i].knob},
           {"correct", scores[i].correct},
           {"answer_mean_depth", scores[i].answer_mean_depth()},
           {"mean_depth", scores[i].mean_depth()},
           {"answer_depths", scores[i].answer_depths}};
    correct += scores[i].correct;
    depth += scores[i].answer_mean_depth();
    lines += r.dump() + "\n";
    records.push_back(std::move(r));
  }
  write_text_file(join(dir, "eval.jsonl"), lines);
  const auto table = analysis::complexity_table(records);
  write_text_file(join(dir, "complexity.csv"), table.csv());
  const double n = std::max<double>(1.0, static_cast<double>(scores.size()));
  return {{"instances", scores.size()},
          {"accuracy", correct / n},
          {"d_bar", depth / n},
          {"savings_ratio", depth / n / static_cast<double>(model.config().depth)},
          {"rule", rule.name()},
          {"mode", mode},
          {"complexity", table.to_json()}};
}

const std::vector<double> kDefaultThresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

// ---------------------------------------------------------------- analysis

template <typename Real>
std::vector<double> expected_depths_at(Model<Real>& model, const TaskInstance& inst, int pad,
                                       const std::vector<std::size_t>& positions) {
  const Batch b = make_batch({&inst}, pad);
  Tape<Real> tape(false);
  const auto tr = forward(model, tape, b, ForwardOptions::infer(default_rule(model.config().decider)));
  std::vector<double> out;
  for (auto p : positions) out.push_back(tr.distribution(p).expected_depth());
  return out;
}

json analyze_mano_parse_state(const RunConfig& c, const std::string& dir, std::vector<std::string>& inputs) {
  const std::string data_path = require(c, "analyze.data");
  inputs.push_back(data_path);
  const Dataset data = read_dataset_file(data_path);
  if (data.task != TaskId::mano) throw DataError("mano-parse-state needs a mano dataset");
  std::optional<Checkpoint> ckp;
  if (c.has("analyze.checkpoint")) {
    inputs.push_back(c.get("analyze.checkpoint"));
    ckp = read_checkpoint(c.get("analyze.checkpoint"));
    check_vocab(*ckp, data);
  }
  std::string csv = "instance,position,token,operator,d,r,s,completions";
  csv += ckp ? ",expected_depth\n" : "\n";
  analysis::Matrix x;
  std::vector<double> y;
  std::vector<std::vector<std::string>> exprs;
  try {
    for (const auto& inst : data.instances) {
      std::vector<std::string> expr;
      std::stringstream ss(inst.payload.at("expression").get<std::string>());
      for (std::string w; ss >> w;) expr.push_back(w);
      exprs.push_back(std::move(expr));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed mano payload: ") + e.what());
  }
  std::vector<std::vector<double>> depths(exprs.size());
  if (ckp) {
    with_checkpoint(*ckp, [&](auto& model) {
      for (std::size_t i = 0; i < exprs.size(); ++i) {
        std::vector<std::size_t> pos;
        for (std::size_t t = 0; t < exprs[i].size(); ++t) pos.push_back(1 + t);  // after <bos>
        depths[i] = expected_depths_at(model, data.instances[i], data.vocab.pad(), pos);
      }
      return 0;
    });
  }
  for (std::size_t i = 0; i < exprs.size(); ++i) {
    const auto states = analysis::mano_parse_state(exprs[i]);
    const auto& depth = depths[i];
    for (std::size_t t = 0; t < states.size(); ++t) {
      const auto& s = states[t];
      csv += std::to_string(i) + "," + std::to_string(t) + "," + s.token + "," + (s.is_operator ? "1" : "0") + "," +
             std::to_string(s.stack_depth) + "," + std::to_string(s.remaining_operands) + "," +
             std::to_string(s.completed_subtree) + "," + std::to_string(s.completions);
      if (ckp) {
        char buf[32];
        std::snprintf(buf, sizeof buf, ",%.10g", depth[t]);
        csv += buf;
        x.push_back({s.is_operator ? 1.0 : 0.0, double(s.stack_depth), double(s.remaining_operands),
                     double(s.completed_subtree)});
        y.push_back(depth[t]);
      }
      csv += "\n";
    }
  }
  write_text_file(join(dir, "parse_state.csv"), csv);
  json out{{"tokens", std::count(csv.begin(), csv.end(), '\n') - 1}, {"outputs", {"parse_state.csv"}}};
  if (ckp) {
    analysis::OlsOptions o;
    o.standardize = true;
    const auto fit = analysis::ols_fit(x, y, {"operator", "d", "r", "s"}, o);
    write_json(join(dir, "parse_state_regression.json"), fit.to_json());
    out["regression"] = fit.to_json();
    out["outputs"].push_back("parse_state_regression.json");
  }
  return out;
}

json analyze_proxies(const RunConfig& c, const std::string& dir, std::vector<std::string>& inputs) {
  const std::string data_path = require(c, "analyze.data"), ckp_path = require(c, "analyze.checkpoint");
  inputs = {data_path, ckp_path};
  const Dataset data = read_dataset_file(data_path);
  const Checkpoint ckp = read_checkpoint(ckp_path);
  check_vocab(ckp, data);
  const pcfg::Grammar grammar = data.meta.contains("grammar")
                                    ? pcfg::Grammar::parse(data.meta.at("grammar").get<std::string>())
                                    : pcfg::Grammar::default_grammar();
  std::size_t dead = 0;
  const auto obs = with_checkpoint(ckp, [&](auto& model) {
    return analysis::lano_proxy_observations(model, data, grammar, &dead);
  });
  const auto table = analysis::proxy_correlation_table(obs, dead);
  std::string per_token = "gamma_slice,beta_end,ops_add,ops_mul,expected_depth\n";
  for (const auto& o : obs) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.0f,%.0f,%.0f,%.0f,%.10g\n", o.gamma_slice, o.beta_end, o.ops_add, o.ops_mul,
                  o.expected_depth);
    per_token += buf;
  }
  write_text_file(join(dir, "proxy_observations.csv"), per_token);
  write_text_file(join(dir, "proxy_correlations.csv"), table.csv());
  write_json(join(dir, "proxy_correlations.json"), table.to_json());
  json out = table.to_json();
  out["outputs"] = {"proxy_observations.csv", "proxy_correlations.csv", "proxy_correlations.json"};
  return out;
}

json analyze_brevo(const RunConfig& c, const std::string& dir, std::vector<std::string>& inputs) {
  const std::string data_path = require(c, "analyze.data"), ckp_path = require(c, "analyze.checkpoint");
  inputs = {data_path, ckp_path};
  const Dataset data = read_dataset_file(data_path);
  const Checkpoint ckp = read_checkpoint(ckp_path);
  check_vocab(ckp, data);
  const ModelConfig mc = ckp.model_config();
  const DepthRule rule = c.has("analyze.rule") ? DepthRule::parse(c.get("analyze.rule")) : default_rule(mc.decider);
  const auto design = with_checkpoint(ckp, [&](auto& model) { return analysis::brevo_design(model, data, rule); });
  const auto reg = analysis::brevo_regression(design);
  write_text_file(join(dir, "brevo_regression.csv"), reg.csv());
  write_json(join(dir, "brevo_regression.json"), reg.to_json());
  json out = reg.to_json();
  out["rule"] = rule.name();
  out["outputs"] = {"brevo_regression.csv", "brevo_regression.json"};
  return out;
}

json analyze_dynamics(const RunConfig& c, const std::string& dir, std::vector<std::string>& inputs) {
  const std::string path = require(c, "analyze.metrics");
  inputs = {path};
  const auto d = analysis::training_dynamics(analysis::read_jsonl(path));
  write_text_file(join(dir, "dynamics.csv"), d.csv());
  write_json(join(dir, "dynamics.json"), d.to_json());
  json out = d.to_json();
  out["outputs"] = {"dynamics.csv", "dynamics.json"};
  return out;
}

std::vector<SweepPoint> sweep_points_from_json(const json& j) {
  std::vector<SweepPoint> pts;
  try {
    for (const auto& p : j.at("points"))
      pts.push_back({p.at("threshold").get<double>(), p.at("accuracy").get<double>(), p.at("d_bar").get<double>(),
                     p.value("instances", std::size_t{0})});
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sweep file: ") + e.what());
  }
  return pts;
}

json analyze_pareto(const RunConfig& c, const std::string& dir, std::vector<std::string>& inputs) {
  const std::string path = require(c, "analyze.sweep");
  inputs = {path};
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  const auto check = analysis::pareto_check(sweep_points_from_json(j));
  write_text_file(join(dir, "pareto.csv"), check.csv());
  write_json(join(dir, "pareto.json"), check.to_json());
  json out = check.to_json();
  out["outputs"] = {"pareto.csv", "pareto.json"};
  return out;
}

}  // namespace

// -------------------------------------------------------------- commands

json cmd_gen(RunConfig c) {
  GenerationSpec spec;
  try {
    spec.task = parse_task_id(require(c, "data.task"));
  } catch (const DataError& e) {
    throw ContractError(e.what());
  }
  if (spec.task != TaskId::lano) spec.knobs = parse_knobs(require(c, "data.knobs"));
  spec.count = c.get_size("data.count", 0);
  if (spec.count == 0) throw ContractError("data.count must be positive");
  spec.seed = static_cast<std::uint64_t>(c.get_int("data.seed", c.get_int("run.seed", 0)));
  spec.depo_nodes = static_cast<int>(c.get_int("data.depo_nodes", spec.depo_nodes));
  spec.lano_max_tokens = c.get_size("data.max_tokens", spec.lano_max_tokens);
  if (c.has("data.grammar") && !c.get("data.grammar").empty()) spec.grammar_text = pcfg::Grammar::load(c.get("data.grammar")).to_text();
  const std::string dir = prepare_output(c);
  const std::string out = c.get("data.out", join(dir, "data.jsonl"));
  const Dataset data = generate_dataset(spec);
  write_dataset_file(out, data);
  std::map<int, std::size_t> hist;
  for (const auto& inst : data.instances) ++hist[inst.knob];
  json h = json::object();
  for (const auto& [k, n] : hist) h[std::to_string(k)] = n;
  return {{"output", out}, {"count", data.instances.size()}, {"histogram", h}};
}

json cmd_train(RunConfig c) {
  const Dataset train = read_dataset_file(require(c, "data.train"));
  std::optional<Dataset> eval;
  if (c.has("data.eval") && !c.get("data.eval").empty()) {
    eval = read_dataset_file(c.get("data.eval"));
    if (eval->vocab.version() != train.vocab.version()) throw DataError("evaluation and training vocabularies differ");
  }
  if (!c.has("model.max_seq_len"))
    c.set("model.max_seq_len", std::to_string(std::max(longest_input(train), eval ? longest_input(*eval) : 0)));
  const ModelConfig mc = resolve_model_config(c, train.vocab.size());
  const TrainConfig tc = resolve_train_config(c, train.task, mc.decider);
  return with_precision(mc, [&](auto& model) { return run_training(model, c, train, eval ? &*eval : nullptr, tc); });
}

json cmd_eval(RunConfig c) {
  const Checkpoint ckp = read_checkpoint(require(c, "eval.checkpoint"));
  const Dataset data = read_dataset_file(require(c, "eval.data"));
  check_vocab(ckp, data);
  const ModelConfig mc = ckp.model_config();
  const DepthRule rule = c.has("eval.rule") ? DepthRule::parse(c.get("eval.rule")) : default_rule(mc.decider);
  const std::string mode = c.get("eval.mode", "teacher");
  const std::size_t batch = c.get_size("eval.batch_size", 64);
  std::optional<std::vector<double>> thresholds;
  if (c.has("eval.thresholds")) {
    thresholds = c.get_doubles("eval.thresholds", {});
    if (mc.decider != DeciderKind::online) throw ContractError("threshold sweeps require the online decider");
  }
  const std::string dir = prepare_output(c);
  json summary = with_checkpoint(ckp, [&](auto& model) {
    json s = run_eval(model, data, rule, mode, batch, dir);
    if (thresholds) {
      const auto check = analysis::pareto_check(threshold_sweep(model, pointers(data), data.vocab.pad(), *thresholds, batch));
      write_text_file(join(dir, "sweep.csv"), check.csv());
      s["sweep"] = check.to_json();
    }
    return s;
  });
  write_json(join(dir, "summary.json"), summary);
  return summary;
}

json cmd_sweep(RunConfig c) {
  const Checkpoint ckp = read_checkpoint(require(c, "eval.checkpoint"));
  const Dataset data = read_dataset_file(require(c, "eval.data"));
  check_vocab(ckp, data);
  if (ckp.model_config().decider != DeciderKind::online) throw ContractError("threshold sweeps require the online decider");
  const auto thresholds = c.get_doubles("eval.thresholds", kDefaultThresholds);
  const std::size_t batch = c.get_size("eval.batch_size", 64);
  const std::string dir = prepare_output(c);
  const auto points = with_checkpoint(
      ckp, [&](auto& model) { return threshold_sweep(model, pointers(data), data.vocab.pad(), thresholds, batch); });
  const auto check = analysis::pareto_check(points);
  write_text_file(join(dir, "pareto.csv"), check.csv());
  write_json(join(dir, "pareto.json"), check.to_json());
  return check.to_json();
}

json cmd_analyze(RunConfig c) {
  const std::string kind = require(c, "analyze.kind");
  using Handler = json (*)(const RunConfig&, const std::string&, std::vector<std::string>&);
  static const std::map<std::string, Handler> handlers{{"spearman-proxies", analyze_proxies},
                                                       {"brevo-regression", analyze_brevo},
                                                       {"mano-parse-state", analyze_mano_parse_state},
                                                       {"dynamics", analyze_dynamics},
                                                       {"pareto", analyze_pareto}};
  const auto it = handlers.find(kind);
  if (it == handlers.end())
    throw ContractError("unknown analysis kind '" + kind +
                        "' (spearman-proxies, brevo-regression, mano-parse-state, dynamics, pareto)");
  const std::string dir = prepare_output(c);
  std::vector<std::string> inputs;
  json out = it->second(c, dir, inputs);
  std::vector<std::string> outputs = out.value("outputs", std::vector<std::string>{});
  json params = json::object();
  for (const auto& [k, v] : c.values()) params[k] = v;
  write_json(join(dir, "manifest.json"), analysis::manifest(kind, inputs, outputs, params));
  return out;
}

}  // namespace anira::cli

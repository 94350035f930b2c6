// SPDX-License-Identifier: Apache-2.0
#include "anira/cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "anira/error.hpp"

namespace anira::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T, typename Convert>
T convert(const std::string& key, const std::string& text, Convert&& fn) {
  try {
    std::size_t used = 0;
    T v = fn(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ContractError("config key " + key + ": cannot parse '" + text + "'");
  }
}

/// Shortest text that parses back to the same double.
std::string exact(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys{
      "run.seed", "run.out", "run.resume",
      "data.task", "data.knobs", "data.count", "data.seed", "data.depo_nodes", "data.grammar", "data.max_tokens",
      "data.out", "data.train", "data.eval",
      "model.depth", "model.heads", "model.prelude_layers", "model.coda_layers", "model.d_model", "model.d_ff",
      "model.decider_d_ff", "model.max_seq_len", "model.decider", "model.gumbel_tau", "model.init_std",
      "model.precision",
      "train.lr", "train.warmup", "train.steps", "train.batch_size", "train.gamma", "train.prior_base",
      "train.max_grad_norm", "train.weight_decay", "train.beta1", "train.beta2", "train.eps", "train.log_every",
      "train.eval_every", "train.eval_batch", "train.checkpoint_every", "train.eval_rule",
      "eval.checkpoint", "eval.data", "eval.rule", "eval.mode", "eval.thresholds", "eval.batch_size",
      "analyze.kind", "analyze.checkpoint", "analyze.data", "analyze.metrics", "analyze.sweep", "analyze.rule"};
  return keys;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    c.apply(line);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void RunConfig::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ContractError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ContractError("unknown config key '" + key + "'");
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return convert<double>(key, get(key), [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  return convert<std::int64_t>(key, get(key), [](const std::string& s, std::size_t* u) { return std::stoll(s, u); });
}

std::size_t RunConfig::get_size(const std::string& key, std::size_t fallback) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ContractError("config key " + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config key " + key + ": expected true or false");
}

std::vector<double> RunConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(convert<double>(key, trim(item), [](const std::string& s, std::size_t* u) { return std::stod(s, u); }));
  if (out.empty()) throw ContractError("config key " + key + " is empty");
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::vector<int> parse_knobs(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) {
    return static_cast<int>(convert<long>("data.knobs", trim(s), [](const std::string& t, std::size_t* u) { return std::stol(t, u); }));
  };
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const int lo = number(item.substr(0, dash)), hi = number(item.substr(dash + 1));
    if (hi < lo) throw ContractError("knob range " + item + " is descending");
    for (int k = lo; k <= hi; ++k) out.push_back(k);
  }
  if (out.empty()) throw ContractError("empty knob list");
  return out;
}

std::pair<double, double> default_gamma_base(TaskId task) {
  switch (task) {
    case TaskId::mano: return {0.1, 1.25};
    case TaskId::brevo: return {0.1, 2.0};
    case TaskId::depo: return {0.1, 1.25};
    case TaskId::lano: return {0.01, 1.0};
  }
  return {0.1, 1.25};
}

ModelConfig resolve_model_config(RunConfig& config, std::size_t vocab_size) {
  ModelConfig m;
  m.depth = config.get_size("model.depth", 8);
  m.n_heads = config.get_size("model.heads", m.n_heads);
  m.n_prelude_layers = config.get_size("model.prelude_layers", m.n_prelude_layers);
  m.n_coda_layers = config.get_size("model.coda_layers", m.n_coda_layers);
  m.d_model = config.get_size("model.d_model", m.d_model);
  m.d_ff = config.get_size("model.d_ff", 4 * m.d_model);
  m.decider_d_ff = config.get_size("model.decider_d_ff", m.decider_d_ff);
  m.max_seq_len = config.get_size("model.max_seq_len", m.max_seq_len);
  m.decider = parse_decider_kind(config.get("model.decider", "early"));
  m.gumbel_tau = config.get_double("model.gumbel_tau", m.gumbel_tau);
  m.init_std = config.get_double("model.init_std", m.init_std);
  m.precision = config.get("model.precision", "float32");
  m.seed = static_cast<std::uint64_t>(config.get_int("run.seed", 0));
  m.vocab_size = vocab_size;
  m.validate();
  config.set("model.depth", std::to_string(m.depth));
  config.set("model.heads", std::to_string(m.n_heads));
  config.set("model.prelude_layers", std::to_string(m.n_prelude_layers));
  config.set("model.coda_layers", std::to_string(m.n_coda_layers));
  config.set("model.d_model", std::to_string(m.d_model));
  config.set("model.d_ff", std::to_string(m.d_ff));
  config.set("model.decider_d_ff", std::to_string(m.decider_d_ff));
  config.set("model.max_seq_len", std::to_string(m.max_seq_len));
  config.set("model.decider", to_string(m.decider));
  config.set("model.precision", m.precision);
  config.set("model.gumbel_tau", exact(m.gumbel_tau));
  config.set("model.init_std", exact(m.init_std));
  return m;
}

TrainConfig resolve_train_config(RunConfig& config, TaskId task, DeciderKind decider) {
  const auto [gamma, base] = default_gamma_base(task);
  TrainConfig t;
  t.lr = config.get_double("train.lr", t.lr);
  t.warmup = config.get_size("train.warmup", t.warmup);
  t.steps = config.get_size("train.steps", t.steps);
  t.batch_size = config.get_size("train.batch_size", t.batch_size);
  t.gamma = config.get_double("train.gamma", gamma);
  t.prior_base = config.get_double("train.prior_base", base);
  t.max_grad_norm = config.get_double("train.max_grad_norm", t.max_grad_norm);
  t.adam.weight_decay = config.get_double("train.weight_decay", t.adam.weight_decay);
  t.adam.beta1 = config.get_double("train.beta1", t.adam.beta1);
  t.adam.beta2 = config.get_double("train.beta2", t.adam.beta2);
  t.adam.eps = config.get_double("train.eps", t.adam.eps);
  t.log_every = config.get_size("train.log_every", t.log_every);
  t.eval_every = config.get_size("train.eval_every", t.eval_every);
  t.eval_batch = config.get_size("train.eval_batch", t.eval_batch);
  t.checkpoint_every = config.get_size("train.checkpoint_every", t.checkpoint_every);
  t.seed = static_cast<std::uint64_t>(config.get_int("run.seed", 0));
  const std::string rule = decider == DeciderKind::online ? "median" : "modal";
  t.eval_rule = DepthRule::parse(config.get("train.eval_rule", rule));
  t.validate();
  config.set("run.seed", std::to_string(t.seed));
  config.set("train.lr", exact(t.lr));
  config.set("train.warmup", std::to_string(t.warmup));
  config.set("train.steps", std::to_string(t.steps));
  config.set("train.batch_size", std::to_string(t.batch_size));
  config.set("train.gamma", exact(t.gamma));
  config.set("train.prior_base", exact(t.prior_base));
  config.set("train.max_grad_norm", exact(t.max_grad_norm));
  config.set("train.weight_decay", exact(t.adam.weight_decay));
  config.set("train.beta1", exact(t.adam.beta1));
  config.set("train.beta2", exact(t.adam.beta2));
  config.set("train.eps", exact(t.adam.eps));
  config.set("train.log_every", std::to_string(t.log_every));
  config.set("train.eval_every", std::to_string(t.eval_every));
  config.set("train.eval_batch", std::to_string(t.eval_batch));
  config.set("train.checkpoint_every", std::to_string(t.checkpoint_every));
  config.set("train.eval_rule", t.eval_rule.name());
  return t;
}

std::string resolve_output_dir(const RunConfig& config) {
  const std::string out = config.get("run.out", "run");
  const std::filesystem::path p(out);
  if (p.is_absolute()) return p.string();
  if (const char* root = std::getenv("ANIRA_OUTPUT_ROOT"); root && *root) return (std::filesystem::path(root) / p).string();
  return p.string();
}

}  // namespace anira::cli

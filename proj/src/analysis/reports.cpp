// SPDX-License-Identifier: Apache-2.0
#include "anira/analysis/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "anira/analysis/probes.hpp"
#include "anira/error.hpp"
#include "anira/pcfg/parser.hpp"
#include "anira/tasks/graph_tasks.hpp"

namespace anira::analysis {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("null"); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- complexity

std::optional<double> ComplexityTable::knob_depth_spearman() const {
  if (rows.size() < 2) return std::nullopt;
  std::vector<double> k, d;
  for (const auto& r : rows) k.push_back(r.knob), d.push_back(r.mean_depth);
  return spearman(k, d);
}

std::string ComplexityTable::csv() const {
  std::string s = "knob,count,accuracy,d_bar\n";
  for (const auto& r : rows)
    s += std::to_string(r.knob) + "," + std::to_string(r.count) + "," + fmt(r.accuracy) + "," + fmt(r.mean_depth) + "\n";
  return s;
}

json ComplexityTable::to_json() const {
  json j{{"rows", json::array()}, {"warnings", warnings}, {"spearman_knob_d_bar", opt_json(knob_depth_spearman())}};
  for (const auto& r : rows)
    j["rows"].push_back({{"knob", r.knob}, {"count", r.count}, {"accuracy", r.accuracy}, {"d_bar", r.mean_depth}});
  return j;
}

ComplexityTable complexity_table(const std::vector<json>& records) {
  struct Acc {
    std::size_t n = 0, correct = 0;
    double depth = 0.0;
  };
  std::map<int, Acc> groups;
  ComplexityTable table;
  std::size_t index = 0;
  for (const auto& r : records) {
    ++index;
    try {
      const int knob = r.at("knob").get<int>();
      if (!r.contains("answer_mean_depth") || r.at("answer_mean_depth").is_null()) {
        table.warnings.push_back("record " + std::to_string(index) + " has no answer depth; skipped");
        continue;
      }
      Acc& a = groups[knob];
      ++a.n;
      a.correct += r.at("correct").get<bool>() ? 1 : 0;
      a.depth += r.at("answer_mean_depth").get<double>();
    } catch (const json::exception& e) {
      throw DataError("evaluation record " + std::to_string(index) + ": " + e.what());
    }
  }
  for (const auto& [knob, a] : groups) {
    if (a.n == 0) continue;
    table.rows.push_back({knob, a.n, static_cast<double>(a.correct) / static_cast<double>(a.n),
                          a.depth / static_cast<double>(a.n)});
  }
  if (table.rows.empty()) table.warnings.push_back("no usable evaluation records");
  return table;
}

// ------------------------------------------------------------------ dynamics

DynamicsSummary summarize_curve(const std::vector<CurvePoint>& curve) {
  DynamicsSummary s;
  if (curve.empty()) return s;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].mean_depth > curve[peak].mean_depth) peak = i;
  s.peak_step = curve[peak].step;
  s.peak_depth = curve[peak].mean_depth;
  s.final_depth = curve.back().mean_depth;
  s.final_over_peak = s.peak_depth > 0.0 ? s.final_depth / s.peak_depth : 1.0;
  const double first = static_cast<double>(curve.front().step);
  const double last = static_cast<double>(curve.back().step);
  s.peak_before_tail = static_cast<double>(s.peak_step) < first + 0.8 * (last - first);
  s.two_phase = s.peak_before_tail && s.final_over_peak <= 0.9;
  return s;
}

namespace {

json summary_json(const DynamicsSummary& s) {
  return {{"peak_step", s.peak_step},         {"peak_d_bar", s.peak_depth},
          {"final_d_bar", s.final_depth},     {"final_over_peak", s.final_over_peak},
          {"peak_before_tail", s.peak_before_tail}, {"two_phase", s.two_phase}};
}

}  // namespace

std::string TrainingDynamics::csv() const {
  std::string s = "knob,step,count,accuracy,d_bar\n";
  for (const auto& p : overall)
    s += "all," + std::to_string(p.step) + "," + std::to_string(p.count) + "," + fmt(p.accuracy) + "," +
         fmt(p.mean_depth) + "\n";
  for (const auto& [knob, curve] : curves)
    for (const auto& p : curve)
      s += std::to_string(knob) + "," + std::to_string(p.step) + "," + std::to_string(p.count) + "," +
           fmt(p.accuracy) + "," + fmt(p.mean_depth) + "\n";
  return s;
}

json TrainingDynamics::to_json() const {
  json j{{"source", source}, {"overall", summary_json(overall_summary)}, {"knobs", json::object()}};
  for (const auto& [knob, s] : summaries) {
    json k = summary_json(s);
    k["points"] = curves.at(knob).size();
    j["knobs"][std::to_string(knob)] = k;
  }
  return j;
}

TrainingDynamics training_dynamics(const std::vector<json>& metrics) {
  TrainingDynamics out;
  const bool have_eval =
      std::any_of(metrics.begin(), metrics.end(), [](const json& r) { return r.value("kind", "") == "eval"; });
  out.source = have_eval ? "eval" : "train";
  try {
    for (const auto& r : metrics) {
      if (r.value("kind", "train") != out.source) continue;
      const auto step = r.at("step").get<std::size_t>();
      CurvePoint all{step, 0.0, 0.0, 0};
      double correct = 0.0, depth = 0.0;
      for (const auto& [key, k] : r.at("knobs").items()) {
        CurvePoint p{step, k.at("accuracy").get<double>(), k.at("d_bar").get<double>(), k.at("count").get<std::size_t>()};
        out.curves[std::stoi(key)].push_back(p);
        all.count += p.count;
        correct += p.accuracy * static_cast<double>(p.count);
        depth += p.mean_depth * static_cast<double>(p.count);
      }
      if (all.count == 0) continue;
      all.accuracy = correct / static_cast<double>(all.count);
      all.mean_depth = depth / static_cast<double>(all.count);
      out.overall.push_back(all);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics record: ") + e.what());
  }
  for (const auto& [knob, curve] : out.curves) out.summaries[knob] = summarize_curve(curve);
  out.overall_summary = summarize_curve(out.overall);
  return out;
}

// -------------------------------------------------------------------- pareto

std::string ParetoCheck::csv() const {
  std::string s = "threshold,accuracy,d_bar,instances\n";
  for (const auto& p : points)
    s += fmt(p.threshold) + "," + fmt(p.accuracy) + "," + fmt(p.mean_depth) + "," + std::to_string(p.instances) + "\n";
  return s;
}

json ParetoCheck::to_json() const {
  json j{{"depth_non_decreasing", depth_non_decreasing},
         {"accuracy_rise_then_flat", accuracy_rise_then_flat},
         {"distinct_points", distinct_points},
         {"pass", pass()},
         {"points", json::array()}};
  for (const auto& p : points)
    j["points"].push_back({{"threshold", p.threshold}, {"accuracy", p.accuracy}, {"d_bar", p.mean_depth}});
  return j;
}

ParetoCheck pareto_check(std::vector<SweepPoint> points, double noise) {
  std::sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.threshold < b.threshold; });
  ParetoCheck c;
  c.depth_non_decreasing = true;
  c.accuracy_rise_then_flat = true;
  double best = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && points[i].mean_depth < points[i - 1].mean_depth) c.depth_non_decreasing = false;
    if (points[i].accuracy < best - noise) c.accuracy_rise_then_flat = false;
    best = std::max(best, points[i].accuracy);
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j)
      seen = seen || (std::abs(points[j].accuracy - points[i].accuracy) <= 1e-9 &&
                      std::abs(points[j].mean_depth - points[i].mean_depth) <= 1e-9);
    c.distinct_points += seen ? 0 : 1;
  }
  c.points = std::move(points);
  return c;
}

// --------------------------------------------------------------- proxy table

std::string ProxyTable::csv() const {
  std::string s = "proxy,spearman_rho,n\n";
  for (const auto& r : rows) s += r.label + "," + fmt(r.rho) + "," + std::to_string(observations) + "\n";
  return s;
}

json ProxyTable::to_json() const {
  json j{{"observations", observations}, {"skipped_dead", skipped_dead}, {"rows", json::array()}};
  for (const auto& r : rows) j["rows"].push_back({{"proxy", r.label}, {"rho", opt_json(r.rho)}});
  return j;
}

ProxyTable proxy_correlation_table(const std::vector<ProxyObservation>& obs, std::size_t skipped_dead) {
  std::vector<double> g, b, a, m, d;
  for (const auto& o : obs) {
    g.push_back(o.gamma_slice);
    b.push_back(o.beta_end);
    a.push_back(o.ops_add);
    m.push_back(o.ops_mul);
    d.push_back(o.expected_depth);
  }
  ProxyTable t;
  t.observations = obs.size();
  t.skipped_dead = skipped_dead;
  auto rho = [&](const std::vector<double>& x) { return obs.size() >= 2 ? spearman(x, d) : std::nullopt; };
  t.rows = {{"Parse-space expansion", rho(g)},
            {"Parse convergence", rho(b)},
            {"Addition operations", rho(a)},
            {"Multiplication operations", rho(m)}};
  return t;
}

namespace {

DepthRule default_rule(const ModelConfig& config) {
  return config.decider == DeciderKind::online ? DepthRule::median() : DepthRule::modal();
}

int pad_of(const Dataset& data) { return data.vocab.pad(); }

template <typename Real, typename PerBatch>
void for_each_batch(Model<Real>& model, const Dataset& data, DepthRule rule, std::size_t batch_size, PerBatch&& fn) {
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < data.instances.size(); start += batch_size) {
    std::vector<const TaskInstance*> chunk;
    for (std::size_t i = start; i < std::min(data.instances.size(), start + batch_size); ++i)
      chunk.push_back(&data.instances[i]);
    Batch b = make_batch(chunk, pad_of(data));
    Tape<Real> tape(false);
    ForwardTrace<Real> tr = forward(model, tape, b, ForwardOptions::infer(rule));
    fn(chunk, b, tr);
  }
}

}  // namespace

template <typename Real>
std::vector<ProxyObservation> lano_proxy_observations(Model<Real>& model, const Dataset& data,
                                                      const pcfg::Grammar& grammar, std::size_t* skipped_dead,
                                                      std::size_t batch_size) {
  if (data.task != TaskId::lano) throw DataError("proxy correlations need a lano dataset");
  std::vector<ProxyObservation> out;
  std::size_t dead = 0;
  for_each_batch(model, data, default_rule(model.config()), batch_size,
                 [&](const std::vector<const TaskInstance*>& chunk, const Batch& b, const ForwardTrace<Real>& tr) {
                   for (std::size_t s = 0; s < chunk.size(); ++s) {
                     const auto& p = chunk[s]->payload;
                     std::vector<std::string> words;
                     std::size_t prefix = 0;
                     try {
                       words = p.at("string").get<std::vector<std::string>>();
                       prefix = p.at("prefix").get<std::size_t>();
                     } catch (const json::exception& e) {
                       throw DataError(std::string("malformed lano payload: ") + e.what());
                     }
                     const auto records = pcfg::extract_sequence_proxies(grammar, words);
                     for (std::size_t k = 0; k < records.size(); ++k) {
                       if (records[k].zero_mass) {
                         ++dead;
                         continue;
                       }
                       // <bos> t_0..t_{p-1} <ans> t_p ...: the separator shifts later terminals by one.
                       const std::size_t pos = k < prefix ? 1 + k : 2 + k;
                       const std::size_t row = s * b.seq + pos;
                       ProxyObservation o;
                       o.gamma_slice = static_cast<double>(records[k].active_gamma_slice);
                       o.beta_end = static_cast<double>(records[k].active_beta_end);
                       o.ops_add = static_cast<double>(records[k].ops_add);
                       o.ops_mul = static_cast<double>(records[k].ops_mul);
                       o.expected_depth = tr.distribution(row).expected_depth();
                       out.push_back(o);
                     }
                   }
                 });
  if (skipped_dead) *skipped_dead = dead;
  return out;
}

template <typename Real>
BrevoDesign brevo_design(Model<Real>& model, const Dataset& data, DepthRule rule, std::size_t batch_size) {
  if (data.task != TaskId::brevo) throw DataError("brevo regression needs a brevo dataset");
  BrevoDesign d;
  d.names = brevo_feature_names();
  for_each_batch(model, data, rule, batch_size,
                 [&](const std::vector<const TaskInstance*>& chunk, const Batch& b, const ForwardTrace<Real>& tr) {
                   for (std::size_t s = 0; s < chunk.size(); ++s) {
                     const TaskInstance& inst = *chunk[s];
                     Graph g;
                     std::string query;
                     try {
                       g = Graph::from_json(inst.payload);
                       query = inst.payload.at("query").get<std::string>();
                     } catch (const json::exception& e) {
                       throw DataError(std::string("malformed brevo payload: ") + e.what());
                     }
                     std::vector<std::string> answer;
                     for (std::size_t a = 0; a + 1 < inst.answer_ids.size(); ++a)
                       answer.push_back(data.vocab.token(inst.answer_ids[a]));
                     const auto features = brevo_state_features(g, query, answer);
                     for (std::size_t a = 0; a < features.size(); ++a) {
                       // The node is predicted from the position just before it.
                       const std::size_t row = s * b.seq + inst.prompt_ids.size() - 1 + a;
                       d.x.push_back(brevo_feature_row(features[a]));
                       d.y.push_back(static_cast<double>(tr.depths[row]));
                       d.graph_size.push_back(features[a].graph_size);
                     }
                   }
                 });
  return d;
}

#define ANIRA_INSTANTIATE_REPORTS(R)                                                                                \
  template std::vector<ProxyObservation> lano_proxy_observations(Model<R>&, const Dataset&, const pcfg::Grammar&, \
                                                                 std::size_t*, std::size_t);                      \
  template BrevoDesign brevo_design(Model<R>&, const Dataset&, DepthRule, std::size_t);

ANIRA_INSTANTIATE_REPORTS(float)
ANIRA_INSTANTIATE_REPORTS(double)

// ----------------------------------------------------------- brevo regression

BrevoRegression brevo_regression(const BrevoDesign& design) {
  BrevoRegression r;
  OlsOptions std_opts;
  std_opts.standardize = true;
  r.full = ols_fit(design.x, design.y, design.names, std_opts);
  r.screen = feature_screen(design.x, design.y, design.names);
  r.screened = ols_fit(select_columns(design.x, design.names, r.screen.retained), design.y, r.screen.retained, std_opts);
  std::vector<std::string> rest;
  for (const auto& n : r.screen.retained)
    if (n != "graph_size") rest.push_back(n);
  OlsOptions cat = std_opts;
  cat.categorical = design.graph_size;
  r.categorical = ols_fit(select_columns(design.x, design.names, rest), design.y, rest, cat);
  return r;
}

json BrevoRegression::to_json() const {
  return {{"full", full.to_json()},
          {"screen", screen.to_json()},
          {"screened", screened.to_json()},
          {"categorical_n", categorical.to_json()}};
}

std::string BrevoRegression::csv() const {
  std::string s = "model,feature,coefficient,delta_r2,vif,r2,n\n";
  auto emit = [&](const std::string& model, const RegressionResult& f) {
    for (std::size_t j = 0; j < f.names.size(); ++j)
      s += model + "," + f.names[j] + "," + fmt(f.coefficients[j]) + "," +
           (j < f.delta_r2.size() ? fmt(f.delta_r2[j]) : std::string("null")) + "," +
           (j < f.vif.size() ? fmt(f.vif[j]) : std::string("null")) + "," + fmt(f.r2) + "," + std::to_string(f.n) +
           "\n";
  };
  emit("full", full);
  emit("screened", screened);
  emit("categorical_n", categorical);
  return s;
}

// ------------------------------------------------------------------ manifest

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

json manifest(const std::string& kind, const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
              const json& parameters) {
  json j{{"kind", kind}, {"inputs", json::array()}, {"outputs", outputs}, {"parameters", parameters}};
  for (const auto& p : inputs) j["inputs"].push_back({{"path", p}, {"fnv1a64", file_hash(p)}});
  return j;
}

}  // namespace anira::analysis

// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Training runs are
// cached under the working directory (acceptance_runs/) and reused when the
// stamp recording their settings matches.
//
//   acceptance [--only 1,2,...] [--runs DIR]
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "anira/analysis/probes.hpp"
#include "anira/analysis/reports.hpp"
#include "anira/analysis/stats.hpp"
#include "anira/checkpoint.hpp"
#include "anira/cli/commands.hpp"
#include "anira/exit_depth.hpp"
#include "anira/inference.hpp"
#include "anira/objective.hpp"
#include "anira/pcfg/parser.hpp"
#include "anira/tasks/graph_tasks.hpp"
#include "anira/tasks/mano.hpp"
#include "../support/fixtures.hpp"
#include "../support/grad_cases.hpp"
#include "../support/oracles.hpp"

using namespace anira;
using namespace anira::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------- tolerances

constexpr double kGradTol = 1e-4;            // per-op relative error (attention cases carry 1e-3)
constexpr int kGradSeeds = 20;
constexpr double kGradSeconds = 60.0;
constexpr double kNormTol = 1e-9;
constexpr double kKlTol = 1e-9;
constexpr int kKlTriples = 1000;
constexpr int kDraws = 100000;
constexpr double kTvTol = 0.01;
constexpr double kCacheTol32 = 1e-5;
constexpr int kCacheSequences = 100;
constexpr double kBetaTol = 1e-12;
constexpr int kParserPairs = 200;
constexpr std::size_t kParserMaxLen = 8;
constexpr double kParserSeconds = 120.0;
constexpr int kManoExpressions = 10000;
constexpr int kBrevoGraphs = 1000;
constexpr double kAccuracyTarget = 0.95;
constexpr double kSpearmanTarget = 0.8;
constexpr double kTwoPhaseRatio = 0.9;  // summarize_curve uses the same cut
constexpr double kTrainMinutes = 60.0;
constexpr double kParetoNoise = 0.02;
constexpr std::size_t kParetoDistinct = 3;
constexpr double kOlsTol = 1e-8;
constexpr double kVifCapScreen = 5.0;
constexpr double kCorrCapScreen = 0.8;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool blocking = true;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------ criterion 1

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  for (const auto& c : gradient_cases()) {
    for (int seed = 1; seed <= kGradSeeds; ++seed) {
      const double err = c.run(static_cast<std::uint64_t>(seed));
      ++checks;
      const double tol = std::min(c.tolerance, c.tolerance > kGradTol ? 1e-3 : kGradTol);
      if (!(err < tol)) ok = false;
      if (err / tol > worst) worst = err / tol, worst_name = c.name;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = ok && secs < kGradSeconds;
  return {ok, std::to_string(gradient_cases().size()) + " ops x " + std::to_string(kGradSeeds) +
                  " seeds; worst err/tol " + fmt("%.3g", worst) + " (" + worst_name + "); " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------ criterion 2

Outcome distribution_suite() {
  bool ok = true;
  const std::vector<double> half{0.5, 0.5};
  ok = ok && ExitDepthDistribution::from_halting(half).q == std::vector<double>{0.5, 0.25, 0.25};
  ok = ok && ExitDepthDistribution::from_halting(std::vector<double>{1.0, 1.0, 1.0}).q ==
                 std::vector<double>{1.0, 0.0, 0.0, 0.0};
  ok = ok && ExitDepthDistribution::from_halting(std::vector<double>{0.0, 0.0, 0.0}).q ==
                 std::vector<double>{0.0, 0.0, 0.0, 1.0};
  Rng rng(41);
  double worst_norm = 0.0, worst_kl = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto depth = static_cast<std::size_t>(rng.integer(1, 16));
    std::vector<double> a(depth - 1);
    for (auto& v : a) v = rng.uniform();
    double s = 0.0;
    for (double q : ExitDepthDistribution::from_halting(a).q) s += q;
    worst_norm = std::max(worst_norm, std::abs(s - 1.0));
  }
  // Early decider distributions from the model itself.
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<double> model(small_config(kind, 6));
    Tape<double> tape(false);
    Rng noise(1);
    auto tr = forward(model, tape, random_batch(rng, 3, 10, 13), ForwardOptions::train(noise));
    for (std::size_t r = 0; r < 30; ++r) {
      double s = 0.0;
      for (double q : tr.distribution(r).q) s += q;
      worst_norm = std::max(worst_norm, std::abs(s - 1.0));
    }
  }
  for (int t = 0; t < kKlTriples; ++t) {
    const auto depth = static_cast<std::size_t>(rng.integer(1, 16));
    const double b = 1.0 + 4.0 * rng.uniform();
    const auto q = random_simplex(rng, depth);
    const double lib = kl_divergence(q, DepthPrior::exponential(b, depth).p);
    worst_kl = std::max({worst_kl, std::abs(lib - kl_direct(q, b)), std::abs(kl_direct(q, b) - kl_decomposed(q, b))});
  }
  ok = ok && worst_norm <= kNormTol && worst_kl <= kKlTol;
  return {ok, "halting cases exact; max |sum q - 1| " + fmt("%.2g", worst_norm) + "; max KL identity gap " +
                  fmt("%.2g", worst_kl) + " over " + std::to_string(kKlTriples) + " triples"};
}

// ------------------------------------------------------------ criterion 3

Outcome sampling_suite() {
  Rng rng(2025);
  const std::vector<double> logits{0.4, -1.0, 1.3, 0.0, -0.2, 0.9};
  std::vector<double> freq(logits.size(), 0.0);
  for (int i = 0; i < kDraws; ++i) freq[gumbel_st_sample(logits, 1.0, rng).depth - 1] += 1.0 / kDraws;
  const double tv_g = total_variation(freq, softmax(logits));
  const auto d = ExitDepthDistribution::from_halting(std::vector<double>{0.2, 0.5, 0.1, 0.6, 0.3});
  std::fill(freq.begin(), freq.end(), 0.0);
  for (int i = 0; i < kDraws; ++i) freq[inverse_cdf_sample(d, rng.uniform()) - 1] += 1.0 / kDraws;
  const double tv_c = total_variation(freq, d.q);
  return {tv_g < kTvTol && tv_c < kTvTol,
          "TV gumbel-ST " + fmt("%.4f", tv_g) + ", inverse-CDF " + fmt("%.4f", tv_c) + " at " + std::to_string(kDraws) + " draws"};
}

// ------------------------------------------------------------ criterion 4

Outcome passthrough_kv_suite() {
  Rng rng(404);
  bool frozen = true, cost = true;
  double worst = 0.0;
  std::size_t entries_ok = 0;
  for (auto kind : {DeciderKind::early, DeciderKind::online}) {
    Model<float> model(small_config(kind, 5, 17));
    for (int trial = 0; trial < kCacheSequences; ++trial) {
      const auto len = static_cast<std::size_t>(rng.integer(1, 20));
      std::vector<int> tokens(len);
      for (auto& t : tokens) t = static_cast<int>(rng.integer(0, 12));
      const auto depths = random_depths(rng, len, 5);
      Decoder<float> dec(model, DepthRule::median());
      std::vector<std::vector<float>> cached;
      for (std::size_t i = 0; i < len; ++i) cached.push_back(dec.step(tokens[i], depths[i]).logits);
      Batch b;
      b.batch = 1;
      b.seq = len;
      b.inputs = tokens;
      b.targets.assign(len, 0);
      b.answer_mask.assign(len, 1);
      b.token_mask.assign(len, 1);
      b.knobs = {0};
      Tape<float> tape(false);
      const auto tr = forward(model, tape, b, forced(depths));
      for (std::size_t i = 0; i < len; ++i) {
        if (cached[i].size() != tr.logits.value().cols()) worst = 1.0;
        for (std::size_t v = 0; v < cached[i].size(); ++v)
          worst = std::max(worst, std::abs(double(cached[i][v]) - double(tr.logits.value().at(i, v))));
        for (std::size_t d = depths[i] + 1; d <= 5; ++d)
          frozen = frozen && rows_identical(tr.states[d].value(), tr.states[depths[i]].value(), i);
      }
      // Cost_exec against a direct count of active tokens per iteration.
      std::size_t active = 0, sum = 0;
      for (std::size_t d = 1; d <= 5; ++d)
        for (auto di : depths) active += di >= d;
      for (auto di : depths) sum += di;
      const auto report = ComputeReport::from_depths(depths, 5, 0, 0.0);
      cost = cost && report.cost_exec == active && active == sum;
      entries_ok += dec.cache().recurrent_entries() == sum;
    }
  }
  const bool ok = frozen && cost && worst <= kCacheTol32 && entries_ok == 2 * kCacheSequences;
  return {ok, std::string("freezing ") + (frozen ? "bitwise" : "BROKEN") + "; cache vs recompute max |diff| " +
                  fmt("%.2g", worst) + " (f32, " + std::to_string(2 * kCacheSequences) + " sequences); Cost_exec " +
                  (cost ? "exact" : "MISMATCH")};
}

// ------------------------------------------------------------ criterion 5

Outcome parser_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(505);
  double worst = 0.0;
  std::size_t count_mismatch = 0, prefixes = 0;
  for (int trial = 0; trial < kParserPairs; ++trial) {
    const pcfg::Grammar g = pcfg::Grammar::parse(random_grammar(rng));
    const auto s = random_string(rng, g, kParserMaxLen);
    pcfg::IncrementalParser p(g);
    pcfg::BruteForceInside bf(g, s);
    const auto nx = static_cast<int>(g.nonterminals().size());
    for (std::size_t n = 1; n <= s.size(); ++n) {
      const auto rec = p.push(s[n - 1]);
      std::size_t ending = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (int x = 0; x < nx; ++x) {
          const double b = bf.probability(x, i, n);
          worst = std::max(worst, std::abs(p.inside(x, i, n) - b));
          ending += b > 0.0;
        }
      ++prefixes;
      // Counts are reported on prefixes of some sentence; dead prefixes report 0.
      if (!rec.zero_mass && rec.active_beta_end != ending) ++count_mismatch;
      if (rec.zero_mass && rec.active_beta_end != 0) ++count_mismatch;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = worst <= kBetaTol && count_mismatch == 0 && secs < kParserSeconds;
  return {ok, "max |beta - brute force| " + fmt("%.2g", worst) + " over " + std::to_string(kParserPairs) +
                  " pairs; active_beta_end mismatches " + std::to_string(count_mismatch) + "/" + std::to_string(prefixes) +
                  "; " + fmt("%.1f", secs) + " s"};
}

// ------------------------------------------------------------ criterion 6

Outcome oracle_suite() {
  Rng rng(606);
  std::size_t mano_bad = 0, brevo_bad = 0, depo_bad = 0;
  for (int i = 0; i < kManoExpressions; ++i) {
    const int L = static_cast<int>(rng.integer(0, 16));
    const auto e = mano::random_expression(L, rng.engine()());
    std::size_t pos = 0;
    mano_bad += mano::evaluate(e) != recursive_eval(e, pos) || pos != e.size();
  }
  for (int t = 0; t < kBrevoGraphs; ++t) {
    const int n = static_cast<int>(rng.integer(2, 30));
    const auto inst = brevo::generate(n, rng.engine()());
    const Graph g = Graph::from_json(inst.payload);
    const auto reach = closure(g);
    const int q = g.index_of(inst.payload.at("query").get<std::string>());
    const auto answer = brevo::solve(g, q);
    std::set<int> expected, got(answer.begin(), answer.end());
    for (int i = 0; i < n; ++i)
      if (reach[i][q]) expected.insert(i);
    bool ok = got == expected && got.size() == answer.size();
    std::map<int, std::size_t> at;
    for (std::size_t k = 0; k < answer.size(); ++k) at[answer[k]] = k;
    for (auto [u, v] : g.edges)
      if (got.count(u) && got.count(v)) ok = ok && at[u] < at[v];
    brevo_bad += !ok;
  }
  for (int t = 0; t < 300; ++t) {
    const int n = static_cast<int>(rng.integer(2, 50)), k = static_cast<int>(rng.integer(1, 16));
    const Graph g = Graph::from_json(depo::generate(n, k, rng.engine()()).payload);
    std::vector<int> succ(n), comp(n);
    for (auto [u, v] : g.edges) succ[u] = v;
    for (int i = 0; i < n; ++i) comp[i] = i;
    for (int s = 0; s < k; ++s)
      for (int i = 0; i < n; ++i) comp[i] = succ[comp[i]];
    for (int i = 0; i < n; ++i) depo_bad += depo::walk(g, i, k) != comp[i];
  }
  return {mano_bad + brevo_bad + depo_bad == 0,
          "mano " + std::to_string(kManoExpressions - mano_bad) + "/" + std::to_string(kManoExpressions) + ", brevo " +
              std::to_string(kBrevoGraphs - brevo_bad) + "/" + std::to_string(kBrevoGraphs) + ", depo mismatches " +
              std::to_string(depo_bad)};
}

// ------------------------------------------------------- training helpers

struct CachedRun {
  std::string dir;
  std::string checkpoint;
  double minutes = 0.0;
  bool reused = false;
};

/// Runs cmd_train unless `dir` holds a finished run with the same stamp.
CachedRun train_cached(const std::string& dir, cli::RunConfig config) {
  config.set("run.out", dir);
  const std::string stamp = config.to_text() + "train=" + analysis::file_hash(config.get("data.train")) +
                            (config.has("data.eval") ? " eval=" + analysis::file_hash(config.get("data.eval")) : "");
  const std::string stamp_path = dir + "/acceptance_stamp.txt";
  CachedRun run{dir, dir + "/final.ckpt"};
  std::ifstream in(stamp_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string previous = ss.str();
  if (fs::exists(run.checkpoint) && fs::exists(dir + "/metrics.jsonl") && previous.rfind(stamp, 0) == 0) {
    run.reused = true;
    const auto at = previous.find("\nminutes=");
    if (at != std::string::npos) run.minutes = std::stod(previous.substr(at + 9));
    return run;
  }
  std::fprintf(stderr, "[acceptance] training %s\n", dir.c_str());
  const auto t0 = std::chrono::steady_clock::now();
  cli::cmd_train(config);
  run.minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  cli::write_text_file(stamp_path, stamp + "\nminutes=" + fmt("%.3f", run.minutes) + "\n");
  return run;
}

std::string gen_cached(const std::string& path, const std::string& task, const std::string& knobs, std::size_t count,
                       std::uint64_t seed) {
  if (fs::exists(path)) return path;
  cli::RunConfig c;
  c.set("run.out", fs::path(path).parent_path().string());
  c.set("data.out", path);
  c.set("data.task", task);
  if (!knobs.empty()) c.set("data.knobs", knobs);
  c.set("data.count", std::to_string(count));
  c.set("data.seed", std::to_string(seed));
  if (task == "lano") c.set("data.max_tokens", "24");
  cli::cmd_gen(c);
  return path;
}

json eval_checkpoint(const std::string& ckp, const std::string& data, const std::string& out) {
  cli::RunConfig c;
  c.set("run.out", out);
  c.set("eval.checkpoint", ckp);
  c.set("eval.data", data);
  return cli::cmd_eval(c);
}

// --------------------------------------------------- criteria 7, 8 and 9

struct ManoResults {
  std::map<std::string, CachedRun> runs;
  std::map<std::string, json> evals;
  std::map<std::string, analysis::TrainingDynamics> dynamics;
  std::string eval_data;
};

cli::RunConfig mano_config(const std::string& train, const std::string& eval, const std::string& decider) {
  cli::RunConfig c;
  c.set("run.seed", "1");
  c.set("data.train", train);
  c.set("data.eval", eval);
  c.set("model.decider", decider);
  c.set("model.d_model", "64");
  c.set("model.depth", "8");
  c.set("model.heads", "4");
  c.set("model.d_ff", "256");
  c.set("train.steps", "15000");
  c.set("train.batch_size", "32");
  c.set("train.lr", "1e-3");
  c.set("train.warmup", "1000");
  c.set("train.gamma", "0.1");
  c.set("train.prior_base", "1.25");
  c.set("train.log_every", "100");
  c.set("train.eval_every", "500");
  c.set("train.checkpoint_every", "5000");
  return c;
}

ManoResults& mano_runs(const std::string& root) {
  static std::optional<ManoResults> cached;
  if (cached) return *cached;
  ManoResults r;
  const std::string train = gen_cached(root + "/data/mano_train.jsonl", "mano", "2-6", 50000, 1);
  r.eval_data = gen_cached(root + "/data/mano_eval.jsonl", "mano", "2-6", 500, 2);
  for (const std::string v : {"early", "online"}) {
    r.runs[v] = train_cached(root + "/mano_" + v, mano_config(train, r.eval_data, v));
    r.evals[v] = eval_checkpoint(r.runs[v].checkpoint, r.eval_data, root + "/mano_" + v + "_eval");
    r.dynamics[v] = analysis::training_dynamics(analysis::read_jsonl(r.runs[v].dir + "/metrics.jsonl"));
  }
  cached = std::move(r);
  return *cached;
}

Outcome mano_reproduction(const std::string& root) {
  auto& r = mano_runs(root);
  bool acc_ok = true, rho_ok = true, budget_ok = true, two_phase = false;
  std::string detail;
  for (const std::string v : {"early", "online"}) {
    const auto& rows = r.evals[v].at("complexity").at("rows");
    std::size_t n = 0;
    double correct = 0.0;
    for (const auto& row : rows)
      if (row.at("knob").get<int>() <= 4) {
        n += row.at("count").get<std::size_t>();
        correct += row.at("accuracy").get<double>() * row.at("count").get<double>();
      }
    const double acc = n ? correct / double(n) : 0.0;
    const auto rho_j = r.evals[v].at("complexity").at("spearman_knob_d_bar");
    const double rho = rho_j.is_null() ? 0.0 : rho_j.get<double>();
    const auto& s = r.dynamics[v].overall_summary;
    const bool tp = s.peak_before_tail && s.final_over_peak <= kTwoPhaseRatio;
    acc_ok = acc_ok && acc >= kAccuracyTarget;
    rho_ok = rho_ok && !rho_j.is_null() && rho >= kSpearmanTarget;
    budget_ok = budget_ok && r.runs[v].minutes <= kTrainMinutes;
    two_phase = two_phase || tp;
    detail += (v == "early" ? "E" : "; O") + std::string(": acc(L<=4) ") + fmt("%.3f", acc) + ", rho(L,d) " +
              (rho_j.is_null() ? std::string("null") : fmt("%.2f", rho)) + ", peak d " + fmt("%.2f", s.peak_depth) +
              "@" + std::to_string(s.peak_step) + " final/peak " + fmt("%.2f", s.final_over_peak) + ", " +
              fmt("%.1f", r.runs[v].minutes) + " min" + (r.runs[v].reused ? " (cached)" : "");
  }
  detail += std::string(" | (a) ") + (acc_ok ? "ok" : "no") + " (b) " + (rho_ok ? "ok" : "no") + " (c) " +
            (two_phase ? "ok" : "no") + " budget " + (budget_ok ? "ok" : "no");
  return {acc_ok && rho_ok && two_phase && budget_ok, detail};
}

Outcome depth_ordering(const std::string& root) {
  auto& r = mano_runs(root);
  const double e = r.evals["early"].at("d_bar").get<double>(), o = r.evals["online"].at("d_bar").get<double>();
  return {o <= e, "d_bar(O) " + fmt("%.3f", o) + " vs d_bar(E) " + fmt("%.3f", e) + " (non-blocking)", false};
}

Outcome pareto_sweep(const std::string& root) {
  auto& r = mano_runs(root);
  cli::RunConfig c;
  c.set("run.out", root + "/mano_online_sweep");
  c.set("eval.checkpoint", r.runs["online"].checkpoint);
  c.set("eval.data", r.eval_data);
  c.set("eval.thresholds", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9");
  const json j = cli::cmd_sweep(c);
  std::vector<SweepPoint> pts;
  for (const auto& p : j.at("points")) pts.push_back({p.at("threshold"), p.at("accuracy"), p.at("d_bar"), 0});
  const auto check = analysis::pareto_check(pts, kParetoNoise);
  std::string curve;
  for (const auto& p : check.points) curve += " " + fmt("%.1f", p.threshold) + ":" + fmt("%.3f", p.accuracy) + "/" + fmt("%.2f", p.mean_depth);
  return {check.pass(kParetoDistinct), std::string("d non-decreasing ") + (check.depth_non_decreasing ? "yes" : "no") +
                                           ", accuracy rise-then-flat " + (check.accuracy_rise_then_flat ? "yes" : "no") +
                                           ", distinct " + std::to_string(check.distinct_points) + " | acc/d:" + curve};
}

// ----------------------------------------------------------- criterion 10

Outcome analysis_suite(const std::string& root) {
  Rng rng(1010);
  double worst = 0.0;
  const std::vector<double> beta{1.5, -2.0, 0.25, 3.0, -0.75};
  for (int t = 0; t < 20; ++t) {
    analysis::Matrix x(80, std::vector<double>(beta.size()));
    std::vector<double> y;
    for (auto& row : x) {
      double v = 0.5;
      for (std::size_t j = 0; j < beta.size(); ++j) v += beta[j] * (row[j] = rng.normal());
      y.push_back(v);
    }
    const auto fit = analysis::ols_fit(x, y, {"a", "b", "c", "d", "e"});
    for (std::size_t j = 0; j < beta.size(); ++j) worst = std::max(worst, std::abs(fit.coefficients[j] - beta[j]));
  }
  bool screen_ok = true;
  for (int t = 0; t < 30; ++t) {
    analysis::Matrix x;
    std::vector<double> y;
    for (int i = 0; i < 150; ++i) {
      const double a = rng.normal(), b = rng.normal(), c = rng.normal();
      x.push_back({a, b, c, a + b + c + 0.2 * rng.normal(), a + 0.1 * rng.normal(), rng.normal()});
      y.push_back(a - x.back()[3] + rng.normal());
    }
    const std::vector<std::string> names{"a", "b", "c", "d", "a2", "e"};
    const auto s = analysis::feature_screen(x, y, names, kCorrCapScreen, kVifCapScreen);
    const auto kept = analysis::select_columns(x, names, s.retained);
    for (double v : analysis::variance_inflation(kept)) screen_ok = screen_ok && v < kVifCapScreen;
    for (std::size_t i = 0; i < s.retained.size(); ++i)
      for (std::size_t j = i + 1; j < s.retained.size(); ++j) {
        std::vector<double> ci, cj;
        for (const auto& row : kept) ci.push_back(row[i]), cj.push_back(row[j]);
        screen_ok = screen_ok && std::abs(*analysis::pearson(ci, cj)) <= kCorrCapScreen;
      }
  }

  // Desk-scale end-to-end runs.
  cli::RunConfig base;
  base.set("run.seed", "3");
  base.set("model.d_model", "32");
  base.set("model.heads", "2");
  base.set("model.depth", "6");
  base.set("train.steps", "1500");
  base.set("train.warmup", "100");
  base.set("train.batch_size", "16");
  base.set("train.log_every", "50");

  cli::RunConfig lano = base;
  lano.set("data.train", gen_cached(root + "/data/lano_train.jsonl", "lano", "", 3000, 5));
  const std::string lano_eval = gen_cached(root + "/data/lano_eval.jsonl", "lano", "", 200, 6);
  const auto lano_run = train_cached(root + "/lano_early", lano);
  cli::RunConfig ap;
  ap.set("run.out", root + "/analysis_proxies");
  ap.set("analyze.kind", "spearman-proxies");
  ap.set("analyze.checkpoint", lano_run.checkpoint);
  ap.set("analyze.data", lano_eval);
  const json proxies = cli::cmd_analyze(ap);
  const std::vector<std::string> labels{"Parse-space expansion", "Parse convergence", "Addition operations",
                                        "Multiplication operations"};
  bool table_ok = proxies.at("rows").size() == 4 && fs::exists(root + "/analysis_proxies/proxy_correlations.csv") &&
                  fs::exists(root + "/analysis_proxies/manifest.json");
  std::string rhos;
  for (std::size_t k = 0; k < labels.size() && table_ok; ++k) {
    table_ok = table_ok && proxies["rows"][k]["proxy"] == labels[k];
    const auto& rho = proxies["rows"][k]["rho"];
    rhos += (k ? ", " : "") + std::string(k == 0 ? "expansion " : k == 1 ? "convergence " : k == 2 ? "add " : "mul ") +
            (rho.is_null() ? std::string("null") : fmt("%+.2f", rho.get<double>()));
  }
  const auto& r0 = proxies["rows"][0]["rho"];
  const auto& r1 = proxies["rows"][1]["rho"];
  const bool signs = !r0.is_null() && !r1.is_null() && r0.get<double>() > 0.0 && r1.get<double>() < 0.0;

  cli::RunConfig brevo = base;
  brevo.set("data.train", gen_cached(root + "/data/brevo_train.jsonl", "brevo", "3-10", 3000, 7));
  const std::string brevo_eval = gen_cached(root + "/data/brevo_eval.jsonl", "brevo", "3-10", 200, 8);
  const auto brevo_run = train_cached(root + "/brevo_early", brevo);
  cli::RunConfig ab;
  ab.set("run.out", root + "/analysis_brevo");
  ab.set("analyze.kind", "brevo-regression");
  ab.set("analyze.checkpoint", brevo_run.checkpoint);
  ab.set("analyze.data", brevo_eval);
  const json reg = cli::cmd_analyze(ab);
  bool reg_ok = true;
  for (const char* k : {"full", "screen", "screened", "categorical_n"}) reg_ok = reg_ok && reg.contains(k);
  if (reg_ok) {
    const auto& f = reg["full"]["features"];
    reg_ok = f.size() + reg["full"]["dropped"].size() == analysis::brevo_feature_names().size() && !reg["categorical_n"]["categories"].empty();
    for (const auto& row : f) reg_ok = reg_ok && row.contains("delta_r2") && row.contains("vif");
    for (const auto& v : reg["screen"]["retained_vif"]) reg_ok = reg_ok && v.get<double>() < kVifCapScreen;
  }
  const bool ok = worst <= kOlsTol && screen_ok && table_ok && reg_ok;
  return {ok, "OLS max coef err " + fmt("%.2g", worst) + "; screen post-conditions " + (screen_ok ? "hold" : "FAIL") +
                  "; proxy table " + (table_ok ? "emitted" : "MISSING") + " (" + rhos + "; expected signs " +
                  (signs ? "seen" : "not seen") + ", soft); BREVO regression " + (reg_ok ? "emitted" : "MISSING") +
                  " (R2 " + (reg.contains("full") ? fmt("%.3f", reg["full"]["r2"].get<double>()) : "?") + ", n " +
                  (reg.contains("full") ? std::to_string(reg["full"]["n"].get<std::size_t>()) : "?") + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string root = "acceptance_runs";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--runs" && i + 1 < argc) {
      root = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--runs DIR]\n");
      return 2;
    }
  }
  fs::create_directories(root + "/data");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"distribution suite", distribution_suite},
      {"sampling suite", sampling_suite},
      {"passthrough and KV cache suite", passthrough_kv_suite},
      {"parser suite", parser_suite},
      {"task oracle suite", oracle_suite},
      {"desk-scale MANO reproduction", [&] { return mano_reproduction(root); }},
      {"online vs early mean depth ordering", [&] { return depth_ordering(root); }},
      {"pareto threshold sweep", [&] { return pareto_sweep(root); }},
      {"analysis suite", [&] { return analysis_suite(root); }},
  };
  int blocking_failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass && o.blocking) ++blocking_failures;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return blocking_failures ? 1 : 0;
}

// SPDX-License-Identifier: Apache-2.0
//
// Report builders over evaluation records, metric streams and trained
// models: complexity tables, training dynamics, threshold-sweep checks,
// parser-proxy correlations and the BREVO allocation regression.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anira/analysis/stats.hpp"
#include "anira/inference.hpp"
#include "anira/model.hpp"
#include "anira/pcfg/grammar.hpp"
#include "anira/tasks/task.hpp"

namespace anira::analysis {

/// Reads a JSONL file; ParseError names the offending line.
std::vector<nlohmann::json> read_jsonl(const std::string& path);

struct ComplexityRow {
  int knob = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_depth = 0.0;
};

struct ComplexityTable {
  std::vector<ComplexityRow> rows;  // ascending knob
  std::vector<std::string> warnings;
  /// Spearman(knob, d_bar) over rows; nullopt with fewer than 2 rows or constant input.
  std::optional<double> knob_depth_spearman() const;
  std::string csv() const;
  nlohmann::json to_json() const;
};

/// Records need "knob", "correct" and "answer_mean_depth". Records with
/// no answer depth are skipped with a warning.
ComplexityTable complexity_table(const std::vector<nlohmann::json>& records);

struct CurvePoint {
  std::size_t step = 0;
  double accuracy = 0.0;
  double mean_depth = 0.0;
  std::size_t count = 0;
};

struct DynamicsSummary {
  std::size_t peak_step = 0;
  double peak_depth = 0.0;
  double final_depth = 0.0;
  double final_over_peak = 0.0;
  bool peak_before_tail = false;  // peak before the last 20% of logged steps
  bool two_phase = false;         // peak_before_tail and final_over_peak <= 0.9
};

DynamicsSummary summarize_curve(const std::vector<CurvePoint>& curve);

struct TrainingDynamics {
  std::string source;  // "eval" or "train"
  std::map<int, std::vector<CurvePoint>> curves;
  std::map<int, DynamicsSummary> summaries;
  std::vector<CurvePoint> overall;
  DynamicsSummary overall_summary;
  std::string csv() const;
  nlohmann::json to_json() const;
};

/// Metric records carry a "kind" of "train" or "eval" plus per-knob stats.
/// Eval records are used when present, otherwise training records.
TrainingDynamics training_dynamics(const std::vector<nlohmann::json>& metrics);

struct ParetoCheck {
  std::vector<SweepPoint> points;
  bool depth_non_decreasing = false;
  bool accuracy_rise_then_flat = false;
  std::size_t distinct_points = 0;
  bool pass(std::size_t min_distinct = 3) const {
    return depth_non_decreasing && accuracy_rise_then_flat && distinct_points >= min_distinct;
  }
  std::string csv() const;
  nlohmann::json to_json() const;
};

/// Points sorted by threshold. Accuracy may dip by at most `noise` below
/// its running maximum; two points are distinct unless both coordinates
/// agree within 1e-9.
ParetoCheck pareto_check(std::vector<SweepPoint> points, double noise = 0.02);

/// Per-terminal observation: the four parser proxies and the expected exit
/// depth at the input position that consumes the terminal.
struct ProxyObservation {
  double gamma_slice = 0.0;
  double beta_end = 0.0;
  double ops_add = 0.0;
  double ops_mul = 0.0;
  double expected_depth = 0.0;
};

struct ProxyRow {
  std::string label;
  std::optional<double> rho;
};

struct ProxyTable {
  std::vector<ProxyRow> rows;
  std::size_t observations = 0;
  std::size_t skipped_dead = 0;  // tokens after the prefix left the language
  std::string csv() const;
  nlohmann::json to_json() const;
};

ProxyTable proxy_correlation_table(const std::vector<ProxyObservation>& obs, std::size_t skipped_dead = 0);

template <typename Real>
std::vector<ProxyObservation> lano_proxy_observations(Model<Real>& model, const Dataset& data,
                                                      const pcfg::Grammar& grammar, std::size_t* skipped_dead = nullptr,
                                                      std::size_t batch_size = 64);

/// BREVO design: one row per answer node, the state features, and the exit
/// depth at the position that predicts the node.
struct BrevoDesign {
  Matrix x;
  std::vector<double> y;
  std::vector<int> graph_size;
  std::vector<std::string> names;
};

template <typename Real>
BrevoDesign brevo_design(Model<Real>& model, const Dataset& data, DepthRule rule, std::size_t batch_size = 64);

struct BrevoRegression {
  RegressionResult full;        // all features, standardized
  ScreenResult screen;
  RegressionResult screened;    // retained features, standardized
  RegressionResult categorical; // retained features without N, N as fixed effects
  nlohmann::json to_json() const;
  std::string csv() const;
};

BrevoRegression brevo_regression(const BrevoDesign& design);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);
std::string file_hash(const std::string& path);

/// Inputs with content hashes and outputs by name; no timestamps.
nlohmann::json manifest(const std::string& kind, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs, const nlohmann::json& parameters);

}  // namespace anira::analysis

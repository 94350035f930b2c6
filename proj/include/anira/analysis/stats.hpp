// SPDX-License-Identifier: Apache-2.0
//
// Rank correlation, least squares with leave-one-out contributions and
// variance inflation factors, and the two-stage collinearity screen.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace anira::analysis {

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> ranks(const std::vector<double>& x);
/// Pearson correlation; nullopt when either input is constant.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Spearman rank correlation; nullopt when either input is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

inline constexpr double kVifCap = 1e6;

/// Observations as rows, features as columns.
using Matrix = std::vector<std::vector<double>>;

struct OlsOptions {
  bool standardize = false;  // features to zero mean, unit variance first
  /// One category label per observation; adds one-hot fixed effects with the
  /// first category (in sorted order) as the baseline.
  std::optional<std::vector<int>> categorical;
  bool contributions = true;  // leave-one-out delta R^2 and VIF
  double rank_tol = 1e-10;
};

struct RegressionResult {
  std::vector<std::string> names;
  std::vector<double> coefficients;  // per feature; 0 for dropped columns
  double intercept = 0.0;
  std::vector<double> fixed_effects;  // one per non-baseline category
  std::vector<int> categories;        // sorted category labels, baseline first
  double r2 = 0.0;
  std::vector<double> delta_r2;  // full minus leave-one-feature-out
  std::vector<double> vif;       // capped at kVifCap
  std::vector<std::string> dropped;  // rank-deficient columns
  std::size_t n = 0;

  nlohmann::json to_json() const;
};

/// Throws ContractError unless observations outnumber the fitted columns.
RegressionResult ols_fit(const Matrix& x, const std::vector<double>& y, const std::vector<std::string>& names,
                         const OlsOptions& options = {});

/// VIF of every column against the others (capped).
std::vector<double> variance_inflation(const Matrix& x);

struct ScreenResult {
  std::vector<std::string> retained;
  std::vector<std::string> dropped_correlated;  // stage 1
  std::vector<std::string> dropped_vif;         // stage 2, in removal order
  std::vector<double> retained_vif;
  nlohmann::json to_json() const;
};

/// Stage 1: for each pair with |r| > corr_cap (strongest first) drop the
/// member less correlated with the target. Stage 2: repeatedly drop the
/// feature with the largest VIF until every VIF is below vif_cap.
ScreenResult feature_screen(const Matrix& x, const std::vector<double>& y, const std::vector<std::string>& names,
                            double corr_cap = 0.8, double vif_cap = 5.0);

/// Columns of x selected by name, in the given order.
Matrix select_columns(const Matrix& x, const std::vector<std::string>& names, const std::vector<std::string>& keep);

}  // namespace anira::analysis

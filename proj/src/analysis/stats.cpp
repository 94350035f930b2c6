// SPDX-License-Identifier: Apache-2.0
#include "anira/analysis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "anira/error.hpp"

namespace anira::analysis {

using nlohmann::json;

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("correlation needs two equal-length samples of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("correlation needs two equal-length samples of size >= 2");
  return pearson(ranks(x), ranks(y));
}

namespace {

using Columns = std::vector<std::vector<double>>;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Fit {
  std::vector<double> beta;  // per column
  std::vector<char> kept;
  double r2 = 0.0;
};

// Least squares by modified Gram-Schmidt with one re-orthogonalisation pass.
// Columns whose residual norm falls below tol times their own norm are
// dropped (coefficient 0).
Fit least_squares(const Columns& cols, const std::vector<double>& y, double tol) {
  const std::size_t p = cols.size();
  std::vector<std::vector<double>> q;
  std::vector<std::size_t> kept_index;
  std::vector<std::vector<double>> r;  // r[k] holds the coefficients of kept column k on q[0..k]
  Fit fit;
  fit.kept.assign(p, 0);
  for (std::size_t c = 0; c < p; ++c) {
    std::vector<double> v = cols[c];
    const double norm0 = std::sqrt(dot(v, v));
    std::vector<double> coef(q.size(), 0.0);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < q.size(); ++k) {
        const double t = dot(q[k], v);
        coef[k] += t;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= t * q[k][i];
      }
    const double norm = std::sqrt(dot(v, v));
    if (norm0 == 0.0 || norm <= tol * norm0) continue;
    for (auto& e : v) e /= norm;
    coef.push_back(norm);
    q.push_back(std::move(v));
    r.push_back(std::move(coef));
    kept_index.push_back(c);
    fit.kept[c] = 1;
  }
  const std::size_t k = q.size();
  std::vector<double> qty(k);
  for (std::size_t j = 0; j < k; ++j) qty[j] = dot(q[j], y);
  std::vector<double> b(k, 0.0);
  for (std::size_t j = k; j-- > 0;) {
    double s = qty[j];
    for (std::size_t m = j + 1; m < k; ++m) s -= r[m][j] * b[m];
    b[j] = s / r[j][j];
  }
  fit.beta.assign(p, 0.0);
  for (std::size_t j = 0; j < k; ++j) fit.beta[kept_index[j]] = b[j];

  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double rss = 0.0, tss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double pred = 0.0;
    for (std::size_t c = 0; c < p; ++c) pred += fit.beta[c] * cols[c][i];
    rss += (y[i] - pred) * (y[i] - pred);
    tss += (y[i] - mean) * (y[i] - mean);
  }
  fit.r2 = tss > 0.0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : 0.0;
  return fit;
}

Columns to_columns(const Matrix& x) {
  const std::size_t p = x.empty() ? 0 : x[0].size();
  Columns cols(p, std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != p) throw DimensionError("feature rows differ in length");
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(x[i][j])) throw NumericError("non-finite feature value");
      cols[j][i] = x[i][j];
    }
  }
  return cols;
}

void standardize(std::vector<double>& c) {
  const double n = static_cast<double>(c.size());
  const double mean = std::accumulate(c.begin(), c.end(), 0.0) / n;
  double var = 0.0;
  for (double v : c) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : c) v = sd > 0.0 ? (v - mean) / sd : 0.0;
}

double vif_of(const Columns& features, std::size_t j, double tol) {
  Columns design{std::vector<double>(features[j].size(), 1.0)};
  for (std::size_t m = 0; m < features.size(); ++m)
    if (m != j) design.push_back(features[m]);
  const double r2 = least_squares(design, features[j], tol).r2;
  if (r2 >= 1.0 - 1.0 / kVifCap) return kVifCap;
  return std::max(1.0, 1.0 / (1.0 - r2));
}

}  // namespace

RegressionResult ols_fit(const Matrix& x, const std::vector<double>& y, const std::vector<std::string>& names,
                         const OlsOptions& options) {
  if (x.size() != y.size()) throw DimensionError("ols: one target per observation required");
  Columns features = to_columns(x);
  const std::size_t p = features.size();
  if (names.size() != p) throw DimensionError("ols: one name per feature required");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("non-finite regression target");
  if (options.standardize)
    for (auto& c : features) standardize(c);

  RegressionResult res;
  res.names = names;
  res.n = y.size();
  Columns fixed;
  if (options.categorical) {
    const auto& labels = *options.categorical;
    if (labels.size() != y.size()) throw DimensionError("ols: one category per observation required");
    std::vector<int> cats(labels.begin(), labels.end());
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    res.categories = cats;
    for (std::size_t c = 1; c < cats.size(); ++c) {
      std::vector<double> col(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) col[i] = labels[i] == cats[c] ? 1.0 : 0.0;
      fixed.push_back(std::move(col));
    }
  }
  const std::size_t columns = 1 + p + fixed.size();
  if (y.size() <= columns) throw ContractError("ols: need more observations than fitted columns");

  auto design = [&](std::optional<std::size_t> skip) {
    Columns d{std::vector<double>(y.size(), 1.0)};
    for (std::size_t j = 0; j < p; ++j)
      if (!skip || *skip != j) d.push_back(features[j]);
    for (const auto& f : fixed) d.push_back(f);
    return d;
  };
  const Fit full = least_squares(design(std::nullopt), y, options.rank_tol);
  res.intercept = full.beta[0];
  res.r2 = full.r2;
  for (std::size_t j = 0; j < p; ++j) {
    res.coefficients.push_back(full.beta[1 + j]);
    if (!full.kept[1 + j]) res.dropped.push_back(names[j]);
  }
  for (std::size_t f = 0; f < fixed.size(); ++f) {
    res.fixed_effects.push_back(full.beta[1 + p + f]);
    if (!full.kept[1 + p + f]) res.dropped.push_back("category=" + std::to_string(res.categories[f + 1]));
  }
  if (options.contributions) {
    for (std::size_t j = 0; j < p; ++j)
      res.delta_r2.push_back(std::max(0.0, full.r2 - least_squares(design(j), y, options.rank_tol).r2));
    for (std::size_t j = 0; j < p; ++j) res.vif.push_back(p > 1 ? vif_of(features, j, options.rank_tol) : 1.0);
  }
  return res;
}

std::vector<double> variance_inflation(const Matrix& x) {
  Columns features = to_columns(x);
  std::vector<double> out;
  for (std::size_t j = 0; j < features.size(); ++j) out.push_back(features.size() > 1 ? vif_of(features, j, 1e-10) : 1.0);
  return out;
}

Matrix select_columns(const Matrix& x, const std::vector<std::string>& names, const std::vector<std::string>& keep) {
  std::vector<std::size_t> idx;
  for (const auto& k : keep) {
    auto it = std::find(names.begin(), names.end(), k);
    if (it == names.end()) throw ContractError("unknown feature '" + k + "'");
    idx.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  Matrix out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j : idx) out[i].push_back(x[i][j]);
  return out;
}

ScreenResult feature_screen(const Matrix& x, const std::vector<double>& y, const std::vector<std::string>& names,
                            double corr_cap, double vif_cap) {
  const Columns cols = to_columns(x);
  const std::size_t p = cols.size();
  if (names.size() != p) throw DimensionError("screen: one name per feature required");
  std::vector<double> target_r(p);
  for (std::size_t j = 0; j < p; ++j) target_r[j] = std::abs(pearson(cols[j], y).value_or(0.0));

  struct Pair {
    double r;
    std::size_t a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a + 1; b < p; ++b) {
      // Identical constant columns count as perfectly correlated.
      const auto r = pearson(cols[a], cols[b]);
      const double v = r ? std::abs(*r) : (cols[a] == cols[b] ? 1.0 : 0.0);
      if (v > corr_cap) pairs.push_back({v, a, b});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) { return l.r > r.r; });
  std::vector<char> alive(p, 1);
  ScreenResult res;
  for (const auto& pr : pairs) {
    if (!alive[pr.a] || !alive[pr.b]) continue;
    const std::size_t drop = target_r[pr.b] > target_r[pr.a] ? pr.a : pr.b;
    alive[drop] = 0;
    res.dropped_correlated.push_back(names[drop]);
  }
  while (true) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < p; ++j)
      if (alive[j]) idx.push_back(j);
    Columns sub;
    for (std::size_t j : idx) sub.push_back(cols[j]);
    std::vector<double> vif;
    for (std::size_t k = 0; k < sub.size(); ++k) vif.push_back(sub.size() > 1 ? vif_of(sub, k, 1e-10) : 1.0);
    const auto worst = std::max_element(vif.begin(), vif.end());
    if (worst == vif.end() || *worst < vif_cap) {
      for (std::size_t k = 0; k < idx.size(); ++k) res.retained.push_back(names[idx[k]]);
      res.retained_vif = vif;
      break;
    }
    const std::size_t drop = idx[static_cast<std::size_t>(worst - vif.begin())];
    alive[drop] = 0;
    res.dropped_vif.push_back(names[drop]);
  }
  return res;
}

json RegressionResult::to_json() const {
  json j;
  j["n"] = n;
  j["r2"] = r2;
  j["intercept"] = intercept;
  json features = json::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    json f{{"name", names[k]}, {"coefficient", coefficients[k]}};
    if (k < delta_r2.size()) f["delta_r2"] = delta_r2[k];
    if (k < vif.size()) f["vif"] = vif[k];
    features.push_back(f);
  }
  j["features"] = features;
  if (!categories.empty()) {
    j["categories"] = categories;
    j["fixed_effects"] = fixed_effects;
  }
  j["dropped"] = dropped;
  return j;
}

json ScreenResult::to_json() const {
  return {{"retained", retained},
          {"retained_vif", retained_vif},
          {"dropped_correlated", dropped_correlated},
          {"dropped_vif", dropped_vif}};
}

}  // namespace anira::analysis

#pragma once

// Machine-readable outputs: JSON fit reports, imputed CSV echo, scaled-slope
// ranking tables.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ace/data.hpp"
#include "ace/error.hpp"
#include "ace/estimator.hpp"
#include "ace/impute.hpp"
#include "ace/lmm.hpp"
#include "ace/numerics.hpp"

namespace ace {

/// Method-agnostic summary of one outcome-model fit. se(k) is NaN where the
/// method provides no standard error (REML-based sigma2).
struct FitReport {
  std::string method;
  std::string outcome;
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta;
  double alpha = 0.0;
  double sigma2 = 0.0;
  Eigen::VectorXd se;  // (beta..., alpha, sigma2)
  bool converged = false;
  int iterations = 0;
  double residual_norm = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_subjects = 0;
  std::size_t n_censored = 0;
  std::optional<double> condition_number;
  std::vector<std::string> degenerate_columns;
  std::vector<std::string> warnings;
  nlohmann::json extra = nlohmann::json::object();

  double alpha_se() const { return se(beta.size()); }
  double scaled_slope() const { return std::abs(alpha) / alpha_se(); }
};

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

inline nlohmann::json to_json(const FitReport& r) {
  using nlohmann::json;
  const double z = norm_quantile(0.975);
  json beta = json::object(), beta_se = json::object(), beta_ci = json::object();
  for (Eigen::Index k = 0; k < r.beta.size(); ++k) {
    const auto& name = r.beta_names[static_cast<std::size_t>(k)];
    beta[name] = r.beta(k);
    beta_se[name] = detail::number_or_null(r.se(k));
    beta_ci[name] = std::isfinite(r.se(k)) ? json::array({r.beta(k) - z * r.se(k), r.beta(k) + z * r.se(k)}) : json(nullptr);
  }
  const Eigen::Index pa = r.beta.size();
  auto ci = [&](double est, double se) {
    return std::isfinite(se) ? json::array({est - z * se, est + z * se}) : json(nullptr);
  };
  json out = {
      {"method", r.method},
      {"outcome", r.outcome},
      {"theta", {{"beta", beta}, {"alpha", r.alpha}, {"sigma2", r.sigma2}}},
      {"se", {{"beta", beta_se}, {"alpha", detail::number_or_null(r.se(pa))}, {"sigma2", detail::number_or_null(r.se(pa + 1))}}},
      {"ci95", {{"beta", beta_ci}, {"alpha", ci(r.alpha, r.se(pa))}, {"sigma2", ci(r.sigma2, r.se(pa + 1))}}},
      {"scaled_slope", detail::number_or_null(r.scaled_slope())},
      {"convergence",
       {{"converged", r.converged}, {"iterations", r.iterations}, {"residual_norm", detail::number_or_null(r.residual_norm)}}},
      {"n_subjects", r.n_subjects},
      {"n_censored", r.n_censored},
      {"warnings", r.warnings},
  };
  if (r.condition_number || !r.degenerate_columns.empty()) {
    out["identifiability"] = {{"condition_number", detail::number_or_null(r.condition_number.value_or(NAN))},
                              {"degenerate_columns", r.degenerate_columns}};
  }
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) out[it.key()] = it.value();
  return out;
}

inline FitReport make_report(const std::string& method, const LongitudinalDataset& ds, const AceFit& fit) {
  FitReport r;
  r.method = method;
  r.beta_names = ds.za_names;
  r.beta = fit.theta.beta;
  r.alpha = fit.theta.alpha;
  r.sigma2 = fit.theta.sigma2;
  r.se = fit.theta.se();
  r.converged = fit.theta.converged;
  r.iterations = fit.theta.iterations;
  r.residual_norm = fit.theta.residual_norm;
  r.n_subjects = ds.size();
  r.n_censored = ds.size() - ds.events();
  r.condition_number = fit.identifiability.condition_number;
  r.degenerate_columns = fit.identifiability.degenerate_names;
  if (fit.sigma2_boundary) r.warnings.push_back("residuals vanish: sigma2 = 0 at the boundary, no standard errors");
  return r;
}

inline FitReport make_report(const std::string& method, const LongitudinalDataset& ds, const RemlFit& fit) {
  FitReport r;
  r.method = method;
  r.beta_names = ds.za_names;
  const Eigen::Index pa = static_cast<Eigen::Index>(ds.p_a);
  r.beta = fit.beta_alpha.head(pa);
  r.alpha = fit.beta_alpha(pa);
  r.sigma2 = fit.sigma2;
  r.se.resize(pa + 2);
  r.se.head(pa + 1) = fit.se;
  r.se(pa + 1) = std::numeric_limits<double>::quiet_NaN();
  r.converged = fit.converged;
  r.n_subjects = ds.size();
  r.n_censored = ds.size() - ds.events();
  r.extra["random_effect"] = {{"tau2", fit.tau2}, {"boundary_tau2", fit.boundary_tau2}, {"n_used", fit.n_used}};
  if (fit.boundary_tau2) r.warnings.push_back("random-effect variance estimated at the boundary (tau2 = 0)");
  return r;
}

inline FitReport make_report(const std::string& method, const LongitudinalDataset& ds, const PooledEstimate& pooled,
                             const std::vector<RemlFit>& fits) {
  FitReport r;
  r.method = method;
  r.beta_names = ds.za_names;
  const Eigen::Index pa = static_cast<Eigen::Index>(ds.p_a);
  r.beta = pooled.theta_bar.head(pa);
  r.alpha = pooled.theta_bar(pa);
  r.sigma2 = pooled.sigma2_bar;
  r.se.resize(pa + 2);
  r.se.head(pa + 1) = pooled.se();
  r.se(pa + 1) = std::numeric_limits<double>::quiet_NaN();
  r.converged = std::all_of(fits.begin(), fits.end(), [](const RemlFit& f) { return f.converged; });
  r.n_subjects = ds.size();
  r.n_censored = ds.size() - ds.events();
  r.extra["imputations"] = pooled.m;
  return r;
}

struct RankEntry {
  std::string outcome;
  double alpha = 0.0;
  double se = 0.0;
  double scaled_slope = 0.0;
  int rank = 0;
};

/// Sorts by scaled slope |alpha| / SE(alpha), descending; ties keep input order.
inline std::vector<RankEntry> rank_outcomes(const std::vector<FitReport>& fits) {
  std::vector<RankEntry> out;
  for (const auto& f : fits) out.push_back({f.outcome, f.alpha, f.alpha_se(), f.scaled_slope(), 0});
  std::stable_sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
    const double x = std::isfinite(a.scaled_slope) ? a.scaled_slope : -1.0;
    const double y = std::isfinite(b.scaled_slope) ? b.scaled_slope : -1.0;
    return x > y;
  });
  for (std::size_t k = 0; k < out.size(); ++k) out[k].rank = static_cast<int>(k + 1);
  return out;
}

inline nlohmann::json to_json(const std::vector<RankEntry>& ranks) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : ranks)
    out.push_back({{"rank", r.rank},
                   {"outcome", r.outcome},
                   {"alpha", r.alpha},
                   {"se", detail::number_or_null(r.se)},
                   {"scaled_slope", detail::number_or_null(r.scaled_slope)}});
  return out;
}

/// Echoes the input table with xhat and imputed_flag appended to every row.
inline void write_imputed_csv(std::ostream& out, const CsvTable& table, const CsvSchema& schema,
                              const ImputedDataset& imp) {
  const auto id_col = table.column(schema.id);
  if (!id_col) throw Error(ErrorKind::MissingColumn, "column '" + schema.id + "' not found");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < imp.base.subjects.size(); ++i) index.emplace(imp.base.subjects[i].id, i);
  const char d = schema.delimiter;
  auto quote = [d](const std::string& s) {
    if (s.find_first_of(std::string(1, d) + "\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (std::size_t k = 0; k < table.header.size(); ++k) out << (k ? std::string(1, d) : "") << quote(table.header[k]);
  out << d << "xhat" << d << "imputed_flag\n";
  for (const auto& row : table.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? std::string(1, d) : "") << quote(row[k]);
    const auto it = index.find(detail::trim(row[*id_col]));
    if (it == index.end()) throw Error(ErrorKind::InvalidDataset, "row id not found in dataset");
    out << d << detail::format_double(imp.xhat[it->second]) << d << (imp.imputed_flag[it->second] ? 1 : 0) << '\n';
  }
}

}  // namespace ace

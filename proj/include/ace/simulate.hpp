#pragma once

// Monte-Carlo harness: synthetic longitudinal data with a Cox-distributed
// event time X, exponential censoring, and a linear mixed outcome; Oracle,
// MCMI and ACE fits per replicate; bias / SEE / ESE / MSE / coverage.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ace/cox.hpp"
#include "ace/data.hpp"
#include "ace/error.hpp"
#include "ace/estimator.hpp"
#include "ace/impute.hpp"
#include "ace/lmm.hpp"
#include "ace/parallel.hpp"
#include "ace/rng.hpp"

namespace ace {

enum class Scenario { CorrectSpec, MisSpec };

inline std::string to_string(Scenario s) { return s == Scenario::CorrectSpec ? "correct" : "misspec"; }

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "correct" || s == "CorrectSpec") return Scenario::CorrectSpec;
  if (s == "misspec" || s == "MisSpec") return Scenario::MisSpec;
  throw Error(ErrorKind::InvalidArgument, "unknown scenario '" + s + "' (expected correct|misspec)");
}

struct SimConfig {
  int n = 1000;
  int m = 3;
  Scenario scenario = Scenario::CorrectSpec;
  std::array<double, 2> eta{1.0, 0.5};
  double lambda_c = 0.5;
  double baseline_hazard = 0.5;
  double beta0 = 1.0;
  double alpha0 = 1.0;
  double sigma2_0 = 1.0;
  int reps = 1;
  std::uint64_t seed = 1;
  int m_imputations = 15;
  unsigned threads = 0;

  /// Defaults for the scenario's true log-hazard ratios.
  static std::array<double, 2> default_eta(Scenario s) {
    return s == Scenario::CorrectSpec ? std::array<double, 2>{1.0, 0.5} : std::array<double, 2>{1.0, 0.25};
  }

  void validate() const {
    if (n < 10) throw Error(ErrorKind::InvalidArgument, "SimConfig: n must be >= 10");
    if (m < 1) throw Error(ErrorKind::InvalidArgument, "SimConfig: m must be >= 1");
    if (reps < 1) throw Error(ErrorKind::InvalidArgument, "SimConfig: reps must be >= 1");
    if (!(lambda_c > 0.0)) throw Error(ErrorKind::InvalidArgument, "SimConfig: lambda_c must be positive");
    if (!(baseline_hazard > 0.0)) throw Error(ErrorKind::InvalidArgument, "SimConfig: baseline_hazard must be positive");
    if (!(sigma2_0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "SimConfig: sigma2 must be positive");
    if (m_imputations < 2) throw Error(ErrorKind::InvalidArgument, "SimConfig: m_imputations must be >= 2");
  }

  Eigen::Vector3d theta0() const { return {beta0, alpha0, sigma2_0}; }

  static SimConfig from_json(const nlohmann::json& j) {
    SimConfig c;
    c.n = j.value("n", c.n);
    c.m = j.value("m", c.m);
    if (j.contains("scenario")) c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    c.eta = default_eta(c.scenario);
    if (j.contains("eta")) {
      auto e = j.at("eta").get<std::vector<double>>();
      if (e.size() != 2) throw Error(ErrorKind::InvalidArgument, "SimConfig: eta must have two entries");
      c.eta = {e[0], e[1]};
    }
    c.lambda_c = j.value("lambda_c", c.lambda_c);
    c.baseline_hazard = j.value("baseline_hazard", c.baseline_hazard);
    if (j.contains("theta0")) {
      const auto& t = j.at("theta0");
      c.beta0 = t.value("beta", c.beta0);
      c.alpha0 = t.value("alpha", c.alpha0);
      c.sigma2_0 = t.value("sigma2", c.sigma2_0);
    }
    c.reps = j.value("reps", c.reps);
    c.seed = j.value("seed", c.seed);
    c.m_imputations = j.value("m_imputations", c.m_imputations);
    c.threads = j.value("threads", c.threads);
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"n", n},
            {"m", m},
            {"scenario", to_string(scenario)},
            {"eta", {eta[0], eta[1]}},
            {"lambda_c", lambda_c},
            {"baseline_hazard", baseline_hazard},
            {"theta0", {{"beta", beta0}, {"alpha", alpha0}, {"sigma2", sigma2_0}}},
            {"reps", reps},
            {"seed", seed},
            {"m_imputations", m_imputations}};
  }
};

/// Generated data plus the true (uncensored) event times for the Oracle.
struct SimulatedReplicate {
  LongitudinalDataset data;
  std::vector<double> x_true;
};

namespace detail {

// Uniform on the open interval (0, 1) from 53 random bits.
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// One synthetic dataset. X is drawn by inversion of a Cox model with constant
/// baseline hazard h0: X = -log(U) / (h0 exp(lp)), where
/// lp = eta1 V1 - eta2 V2 (correct) or eta1 V1 - eta2 V1^2 (misspecified).
inline SimulatedReplicate generate_replicate(const SimConfig& cfg, int rep_index) {
  cfg.validate();
  Rng rng = make_stream(cfg.seed, {static_cast<std::uint64_t>(StreamTag::Replicate), static_cast<std::uint64_t>(rep_index)});
  std::normal_distribution<double> z01(0.0, 1.0);

  SimulatedReplicate out;
  auto& ds = out.data;
  ds.p_a = 1;
  ds.p_b = 1;
  ds.za_names = {"za"};
  ds.zb_names = {"z"};
  if (cfg.scenario == Scenario::CorrectSpec) {
    ds.p_v = 2;
    ds.v_names = {"v1", "v2"};
  } else {
    ds.p_v = 1;
    ds.v_names = {"v1"};
  }
  ds.subjects.reserve(static_cast<std::size_t>(cfg.n));
  out.x_true.reserve(static_cast<std::size_t>(cfg.n));

  const double sigma = std::sqrt(cfg.sigma2_0);
  for (int i = 0; i < cfg.n; ++i) {
    const double v1 = z01(rng);
    const double v2 = z01(rng);
    const double lp = cfg.scenario == Scenario::CorrectSpec ? cfg.eta[0] * v1 - cfg.eta[1] * v2
                                                            : cfg.eta[0] * v1 - cfg.eta[1] * v1 * v1;
    const double x = -std::log(detail::uniform_open01(rng)) / (cfg.baseline_hazard * std::exp(lp));
    const double c = -std::log(detail::uniform_open01(rng)) / cfg.lambda_c;
    const double b = z01(rng);

    SubjectRecord r;
    r.id = std::to_string(i + 1);
    r.y.resize(cfg.m);
    r.s.resize(cfg.m);
    r.za.resize(cfg.m, 1);
    r.zb.resize(cfg.m, 1);
    for (int j = 0; j < cfg.m; ++j) {
      const double za = z01(rng);
      const double z = 5.0 + z01(rng);
      const double eps = sigma * z01(rng);
      const double s = static_cast<double>(j);
      r.s(j) = s;
      r.za(j, 0) = za;
      r.zb(j, 0) = z;
      r.y(j) = cfg.beta0 * za + cfg.alpha0 * (s - x) + b * z + eps;
    }
    r.w = std::min(x, c);
    r.delta = x <= c ? 1 : 0;
    if (cfg.scenario == Scenario::CorrectSpec) {
      r.v = Eigen::Vector2d(v1, v2);
    } else {
      r.v = Eigen::VectorXd::Constant(1, v1);
    }
    ds.subjects.push_back(std::move(r));
    out.x_true.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Study

enum class Method { Oracle, MCMI, ACE };
inline constexpr std::array<Method, 3> kMethods{Method::Oracle, Method::MCMI, Method::ACE};
inline constexpr std::array<const char*, 3> kParamNames{"beta", "alpha", "sigma2"};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Oracle: return "Oracle";
    case Method::MCMI: return "MCMI";
    case Method::ACE: return "ACE";
  }
  return "?";
}

/// Point estimates and standard errors of (beta, alpha, sigma2) for one fit;
/// NaN SE where the method does not report one.
struct MethodResult {
  bool ok = false;
  std::string error;
  std::array<double, 3> est{};
  std::array<double, 3> se{};
};

struct ReplicateResult {
  std::array<MethodResult, 3> methods;
  double censoring_fraction = 0.0;
};

inline ReplicateResult run_replicate(const SimConfig& cfg, int rep_index) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  const auto sim = generate_replicate(cfg, rep_index);
  const auto& ds = sim.data;
  ReplicateResult out;
  out.censoring_fraction = 1.0 - static_cast<double>(ds.events()) / static_cast<double>(ds.size());

  auto guarded = [](MethodResult& slot, auto&& body) {
    try {
      body();
      slot.ok = true;
    } catch (const std::exception& e) {
      slot.ok = false;
      slot.error = e.what();
    }
  };

  guarded(out.methods[0], [&] {
    const auto f = fit_reml(ds, std::span<const double>(sim.x_true));
    out.methods[0].est = {f.beta_alpha(0), f.beta_alpha(1), f.sigma2};
    out.methods[0].se = {f.se(0), f.se(1), nan};
  });

  std::optional<CoxFit> cox;
  try {
    cox = fit_cox(ds.w(), ds.delta(), ds.v());
  } catch (const std::exception& e) {
    out.methods[1].error = out.methods[2].error = e.what();
    return out;
  }

  guarded(out.methods[1], [&] {
    const auto draws = draw_multiple_imputations(ds, *cox, cfg.m_imputations,
                                                 derive_seed(cfg.seed, {static_cast<std::uint64_t>(rep_index)}));
    std::vector<RemlFit> fits;
    fits.reserve(draws.size());
    for (const auto& d : draws) fits.push_back(fit_reml(d));
    const auto pooled = pool_rubin(std::span<const RemlFit>(fits));
    const Eigen::VectorXd se = pooled.se();
    out.methods[1].est = {pooled.theta_bar(0), pooled.theta_bar(1), pooled.sigma2_bar};
    out.methods[1].se = {se(0), se(1), nan};
  });

  guarded(out.methods[2], [&] {
    const auto imp = conditional_mean_impute(ds, *cox);
    const auto fit = fit_ace(imp);
    const Eigen::VectorXd se = fit.theta.se();
    out.methods[2].est = {fit.theta.beta(0), fit.theta.alpha, fit.theta.sigma2};
    out.methods[2].se = {se(0), se(1), se(2)};
  });
  return out;
}

struct SimRow {
  std::string method;
  std::string parameter;
  double bias = 0.0;
  double see = 0.0;
  double ese = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  int n_used = 0;
  int n_fail = 0;
};

struct SimReport {
  Scenario scenario = Scenario::CorrectSpec;
  double lambda_c = 0.0;
  int reps = 0;
  double mean_censoring = 0.0;
  std::vector<SimRow> rows;
  std::vector<std::string> failures;  // "rep <k> <method>: message"

  const SimRow& row(const std::string& method, const std::string& parameter) const {
    for (const auto& r : rows)
      if (r.method == method && r.parameter == parameter) return r;
    throw Error(ErrorKind::InvalidArgument, "no report row for " + method + "/" + parameter);
  }
};

/// Aggregates replicate results in replicate order.
inline SimReport summarize(const SimConfig& cfg, const std::vector<ReplicateResult>& results) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  const Eigen::Vector3d truth = cfg.theta0();
  const double z = norm_quantile(0.975);
  SimReport rep;
  rep.scenario = cfg.scenario;
  rep.lambda_c = cfg.lambda_c;
  rep.reps = static_cast<int>(results.size());
  for (const auto& r : results) rep.mean_censoring += r.censoring_fraction;
  if (!results.empty()) rep.mean_censoring /= static_cast<double>(results.size());

  for (std::size_t mi = 0; mi < kMethods.size(); ++mi) {
    for (std::size_t k = 0; k < results.size(); ++k) {
      const auto& mr = results[k].methods[mi];
      if (!mr.ok) rep.failures.push_back("rep " + std::to_string(k) + " " + to_string(kMethods[mi]) + ": " + mr.error);
    }
    for (int p = 0; p < 3; ++p) {
      SimRow row;
      row.method = to_string(kMethods[mi]);
      row.parameter = kParamNames[static_cast<std::size_t>(p)];
      std::vector<double> est, se;
      for (const auto& r : results) {
        const auto& mr = r.methods[mi];
        if (!mr.ok || !std::isfinite(mr.est[static_cast<std::size_t>(p)])) {
          ++row.n_fail;
          continue;
        }
        est.push_back(mr.est[static_cast<std::size_t>(p)]);
        se.push_back(mr.se[static_cast<std::size_t>(p)]);
      }
      row.n_used = static_cast<int>(est.size());
      if (est.empty()) {
        row.bias = row.see = row.ese = row.mse = row.coverage = nan;
        rep.rows.push_back(row);
        continue;
      }
      const double n = static_cast<double>(est.size());
      const double t = truth(p);
      double sum = 0.0, sq = 0.0;
      for (double e : est) {
        sum += e;
        sq += (e - t) * (e - t);
      }
      const double mean = sum / n;
      row.bias = mean - t;
      row.mse = sq / n;
      double ss = 0.0;
      for (double e : est) ss += (e - mean) * (e - mean);
      row.ese = est.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      const bool has_se = std::all_of(se.begin(), se.end(), [](double s) { return std::isfinite(s); });
      if (has_se) {
        double see = 0.0, cover = 0.0;
        for (std::size_t k = 0; k < est.size(); ++k) {
          see += se[k];
          if (std::abs(est[k] - t) <= z * se[k]) cover += 1.0;
        }
        row.see = see / n;
        row.coverage = cover / n;
      } else {
        row.see = row.coverage = nan;
      }
      rep.rows.push_back(row);
    }
  }
  return rep;
}

/// Runs cfg.reps replicates (in parallel on cfg.threads workers) and
/// aggregates. Output is independent of the thread count.
inline SimReport run_study(const SimConfig& cfg) {
  cfg.validate();
  std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.reps));
  parallel_for(results.size(), cfg.threads,
               [&](std::size_t k) { results[k] = run_replicate(cfg, static_cast<int>(k)); });
  return summarize(cfg, results);
}

inline std::string format_metric(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_report_csv(std::ostream& out, const std::vector<SimReport>& reports) {
  out << "scenario,censoring,method,parameter,bias,see,ese,mse,coverage,n_fail\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      out << to_string(rep.scenario) << ',' << format_metric(rep.lambda_c) << ',' << r.method << ',' << r.parameter
          << ',' << format_metric(r.bias) << ',' << format_metric(r.see) << ',' << format_metric(r.ese) << ','
          << format_metric(r.mse) << ',' << format_metric(r.coverage) << ',' << r.n_fail << '\n';
    }
  }
}

}  // namespace ace

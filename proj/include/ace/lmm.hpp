#pragma once

// Baseline estimators: REML for a linear mixed model with one random-effect
// column per subject, complete-case analysis, and Rubin's-rules pooling.
//
// Model per group: y = X b + z u + e, u ~ N(0, tau2), e ~ N(0, sigma2 I).
// With ratio lambda = tau2 / sigma2, H = I + lambda z z' has the closed-form
// inverse I - lambda z z' / (1 + lambda z'z) and log|H| = log(1 + lambda z'z),
// so b and sigma2 profile out and REML reduces to a 1-D search in log lambda.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ace/data.hpp"
#include "ace/error.hpp"
#include "ace/impute.hpp"
#include "ace/numerics.hpp"

namespace ace {

struct RemlGroup {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  Eigen::VectorXd z;
};

struct RemlFit {
  Eigen::VectorXd beta_alpha;
  Eigen::VectorXd se;
  double sigma2 = 0.0;
  double tau2 = 0.0;
  double loglik_reml = 0.0;
  double log_ratio = 0.0;
  bool boundary_tau2 = false;  // ratio at the lower search bound
  bool converged = false;
  std::size_t n_used = 0;
};

struct RemlOptions {
  double log_ratio_min = std::log(1e-8);
  double log_ratio_max = std::log(1e8);
  double tol = 1e-10;
  int grid_points = 41;
};

namespace detail {

struct RemlProfile {
  double loglik = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd coef;
  Eigen::MatrixXd xtvx;  // X' H^-1 X
  double sigma2 = 0.0;
};

// Groups are summarized once: X'X, X'z, X'y, z'z, z'y, y'y per group.
struct RemlSummary {
  struct Group {
    Eigen::MatrixXd xtx;
    Eigen::VectorXd xtz;
    Eigen::VectorXd xty;
    double ztz, zty, yty;
  };
  std::vector<Group> groups;
  Eigen::Index p = 0;
  double n_obs = 0.0;

  explicit RemlSummary(std::span<const RemlGroup> in) {
    if (in.empty()) throw Error(ErrorKind::EmptyDataset, "REML: no groups");
    p = in.front().x.cols();
    groups.reserve(in.size());
    for (const auto& g : in) {
      if (g.x.cols() != p || g.x.rows() != g.y.size() || g.z.size() != g.y.size())
        throw Error(ErrorKind::LayoutMismatch, "REML: inconsistent group dimensions");
      groups.push_back({g.x.transpose() * g.x, g.x.transpose() * g.z, g.x.transpose() * g.y, g.z.squaredNorm(),
                        g.z.dot(g.y), g.y.squaredNorm()});
      n_obs += static_cast<double>(g.y.size());
    }
  }

  RemlProfile evaluate(double log_ratio) const {
    const double lambda = std::exp(log_ratio);
    RemlProfile out;
    Eigen::MatrixXd xtvx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xtvy = Eigen::VectorXd::Zero(p);
    double ytvy = 0.0;
    double logdet_h = 0.0;
    for (const auto& g : groups) {
      const double denom = 1.0 + lambda * g.ztz;
      const double c = lambda / denom;
      xtvx.noalias() += g.xtx - c * g.xtz * g.xtz.transpose();
      xtvy.noalias() += g.xty - c * g.xtz * g.zty;
      ytvy += g.yty - c * g.zty * g.zty;
      logdet_h += std::log(denom);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(xtvx);
    if (llt.info() != Eigen::Success) return out;
    out.coef = llt.solve(xtvy);
    const double rss = ytvy - xtvy.dot(out.coef);
    const double dof = n_obs - static_cast<double>(p);
    if (!(rss > 0.0) || !(dof > 0.0)) return out;
    out.sigma2 = rss / dof;
    const Eigen::MatrixXd l = llt.matrixL();
    const double logdet_xtvx = 2.0 * l.diagonal().array().log().sum();
    out.loglik = -0.5 * (dof * (1.0 + std::log(2.0 * M_PI * out.sigma2)) + logdet_h + logdet_xtvx);
    out.xtvx = std::move(xtvx);
    return out;
  }
};

}  // namespace detail

/// Maximizes the profiled REML criterion over log(tau2/sigma2): coarse grid
/// to bracket the maximum, then golden-section refinement to `tol`.
inline RemlFit fit_reml(std::span<const RemlGroup> groups, const RemlOptions& opt = {}) {
  const detail::RemlSummary sum(groups);
  if (sum.n_obs <= static_cast<double>(sum.p))
    throw Error(ErrorKind::InvalidArgument, "REML: not enough observations for the fixed effects");

  const double lo = opt.log_ratio_min;
  const double hi = opt.log_ratio_max;
  const int k = std::max(3, opt.grid_points);
  std::vector<double> grid(static_cast<std::size_t>(k));
  std::vector<double> vals(static_cast<std::size_t>(k));
  std::size_t best = 0;
  for (int i = 0; i < k; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (k - 1);
    vals[static_cast<std::size_t>(i)] = sum.evaluate(grid[static_cast<std::size_t>(i)]).loglik;
    if (vals[static_cast<std::size_t>(i)] > vals[best]) best = static_cast<std::size_t>(i);
  }
  if (!std::isfinite(vals[best])) throw Error(ErrorKind::NonConvergence, "REML criterion is not finite on the search range");

  double a = grid[best == 0 ? 0 : best - 1];
  double b = grid[std::min<std::size_t>(best + 1, grid.size() - 1)];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = sum.evaluate(c).loglik;
  double fd = sum.evaluate(d).loglik;
  while (b - a > opt.tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = sum.evaluate(c).loglik;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = sum.evaluate(d).loglik;
    }
  }
  double x = 0.5 * (a + b);
  auto prof = sum.evaluate(x);
  // endpoints are candidates too (the golden section never evaluates them)
  for (double e : {lo, hi}) {
    if (std::abs(x - e) < (hi - lo) / (k - 1)) {
      auto pe = sum.evaluate(e);
      if (pe.loglik > prof.loglik) {
        prof = std::move(pe);
        x = e;
      }
    }
  }
  if (!std::isfinite(prof.loglik)) throw Error(ErrorKind::NonConvergence, "REML optimum is not finite");

  RemlFit fit;
  fit.beta_alpha = prof.coef;
  fit.sigma2 = prof.sigma2;
  fit.log_ratio = x;
  fit.boundary_tau2 = (x - lo) < 1e-6;
  fit.tau2 = fit.boundary_tau2 ? 0.0 : std::exp(x) * prof.sigma2;
  fit.loglik_reml = prof.loglik;
  fit.converged = true;
  fit.n_used = groups.size();
  const Eigen::MatrixXd cov = prof.sigma2 * prof.xtvx.inverse();
  fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

/// REML groups for the outcome model with fixed effects (Z^a, s - x) and the
/// single Z^b column as random effect. `x` holds one value per subject.
inline std::vector<RemlGroup> reml_groups(const LongitudinalDataset& ds, std::span<const double> x) {
  if (ds.p_b != 1)
    throw Error(ErrorKind::InvalidArgument, "REML baselines support exactly one random-effect column (p_b = " +
                                                std::to_string(ds.p_b) + ")");
  if (x.size() != ds.size()) throw Error(ErrorKind::LayoutMismatch, "REML: x has wrong length");
  std::vector<RemlGroup> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.subjects[i];
    RemlGroup g;
    g.y = r.y;
    g.x.resize(r.visits(), ds.p_a + 1);
    g.x.leftCols(ds.p_a) = r.za;
    g.x.col(ds.p_a) = r.s.array() - x[i];
    g.z = r.zb.col(0);
    out.push_back(std::move(g));
  }
  return out;
}

inline RemlFit fit_reml(const LongitudinalDataset& ds, std::span<const double> x, const RemlOptions& opt = {}) {
  const auto groups = reml_groups(ds, x);
  return fit_reml(std::span<const RemlGroup>(groups), opt);
}

/// REML on an imputed dataset (X replaced by Xhat).
inline RemlFit fit_reml(const ImputedDataset& ds, const RemlOptions& opt = {}) {
  return fit_reml(ds.base, std::span<const double>(ds.xhat), opt);
}

/// REML restricted to uncensored subjects, using their observed X.
inline RemlFit complete_case(const LongitudinalDataset& ds, const RemlOptions& opt = {}) {
  LongitudinalDataset cc = ds;
  cc.subjects.clear();
  std::vector<double> x;
  for (const auto& r : ds.subjects) {
    if (r.delta == 1) {
      cc.subjects.push_back(r);
      x.push_back(r.w);
    }
  }
  if (cc.subjects.size() < 2) throw Error(ErrorKind::TooFewUncensored, "complete-case analysis needs >= 2 uncensored subjects");
  return fit_reml(cc, std::span<const double>(x), opt);
}

// ---------------------------------------------------------------------------
// Rubin's rules

struct PooledEstimate {
  Eigen::VectorXd theta_bar;
  Eigen::VectorXd within_var;
  Eigen::VectorXd between_var;
  Eigen::VectorXd total_var;
  double sigma2_bar = 0.0;
  int m = 0;

  Eigen::VectorXd se() const { return total_var.cwiseMax(0.0).cwiseSqrt(); }
};

/// Pools fits with mean estimates, within = mean SE^2, between = sample
/// variance, total = within + (1 + 1/m) between.
inline PooledEstimate pool_rubin(std::span<const RemlFit> fits) {
  if (fits.size() < 2) throw Error(ErrorKind::InvalidArgument, "Rubin pooling needs at least two fits");
  const Eigen::Index p = fits.front().beta_alpha.size();
  for (const auto& f : fits)
    if (f.beta_alpha.size() != p || f.se.size() != p)
      throw Error(ErrorKind::LayoutMismatch, "Rubin pooling: fits have different parameter layouts");
  const double m = static_cast<double>(fits.size());
  PooledEstimate out;
  out.m = static_cast<int>(fits.size());
  out.theta_bar = Eigen::VectorXd::Zero(p);
  out.within_var = Eigen::VectorXd::Zero(p);
  for (const auto& f : fits) {
    out.theta_bar += f.beta_alpha;
    out.within_var += f.se.cwiseAbs2();
    out.sigma2_bar += f.sigma2;
  }
  out.theta_bar /= m;
  out.within_var /= m;
  out.sigma2_bar /= m;
  out.between_var = Eigen::VectorXd::Zero(p);
  for (const auto& f : fits) out.between_var += (f.beta_alpha - out.theta_bar).cwiseAbs2();
  out.between_var /= (m - 1.0);
  out.total_var = out.within_var + (1.0 + 1.0 / m) * out.between_var;
  return out;
}

}  // namespace ace

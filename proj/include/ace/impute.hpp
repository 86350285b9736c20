#pragma once

// Conditional-mean imputation of right-censored covariate values from a
// fitted Cox model, and stochastic multiple imputation for MCMI.
//
// For a censored subject with censoring time C and e = exp(gamma' v):
//
//   Xhat = C + 1/2 * sum_{j: W(j) >= C} {S0(W(j+1))^e + S0(W(j))^e}(W(j+1) - W(j))
//                  / S0(C)^e
//
// with W(1) < ... < W(n) the distinct ordered observed times. The sum is the
// trapezoid rule for the integral of the conditional survival curve.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ace/cox.hpp"
#include "ace/data.hpp"
#include "ace/error.hpp"
#include "ace/rng.hpp"

namespace ace {

struct ImputedDataset {
  LongitudinalDataset base;
  std::vector<double> xhat;
  std::vector<bool> imputed_flag;
  CoxFit cox_fit;
  Eigen::VectorXd gamma_used;     // gamma actually plugged in (differs from cox_fit.gamma for MCMI draws)
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return base.size(); }
};

/// Distinct sorted W values and the fitted cumulative baseline hazard at each.
struct ImputationGrid {
  std::vector<double> times;
  std::vector<double> cumhaz;

  static ImputationGrid build(const LongitudinalDataset& ds, const BaselineSurvival& s0) {
    ImputationGrid g;
    g.times.reserve(ds.size());
    for (const auto& r : ds.subjects) g.times.push_back(r.w);
    std::sort(g.times.begin(), g.times.end());
    g.times.erase(std::unique(g.times.begin(), g.times.end()), g.times.end());
    g.cumhaz.reserve(g.times.size());
    for (double t : g.times) g.cumhaz.push_back(s0.cumulative_hazard(t));
    return g;
  }
};

inline constexpr double kDenominatorFloor = 1e-12;

namespace detail {

// Returns Xhat for censoring time c, or nullopt when S0(c)^e underflows the floor.
inline std::optional<double> conditional_mean(const ImputationGrid& g, const BaselineSurvival& s0, double c,
                                              double e) {
  const double denom = std::exp(-e * s0.cumulative_hazard(c));
  if (!(denom >= kDenominatorFloor)) return std::nullopt;
  const auto first = static_cast<std::size_t>(std::lower_bound(g.times.begin(), g.times.end(), c) - g.times.begin());
  double sum = 0.0;
  if (first < g.times.size()) {
    double s_prev = std::exp(-e * g.cumhaz[first]);
    for (std::size_t j = first; j + 1 < g.times.size(); ++j) {
      const double s_next = std::exp(-e * g.cumhaz[j + 1]);
      sum += (s_next + s_prev) * (g.times[j + 1] - g.times[j]);
      s_prev = s_next;
    }
  }
  return c + 0.5 * sum / denom;
}

inline ImputedDataset impute_with_gamma(const LongitudinalDataset& ds, const CoxFit& fit,
                                        const ImputationGrid& grid, const Eigen::VectorXd& gamma) {
  if (gamma.size() != ds.p_v)
    throw Error(ErrorKind::InvalidArgument, "imputation: Cox fit has " + std::to_string(gamma.size()) +
                                                " coefficients but dataset has p_v = " + std::to_string(ds.p_v));
  ImputedDataset out;
  out.base = ds;
  out.cox_fit = fit;
  out.gamma_used = gamma;
  out.xhat.resize(ds.size());
  out.imputed_flag.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.subjects[i];
    if (r.delta == 1) {
      out.xhat[i] = r.w;
      out.imputed_flag[i] = false;
      continue;
    }
    out.imputed_flag[i] = true;
    const double e = gamma.size() ? std::exp(gamma.dot(r.v)) : 1.0;
    auto x = detail::conditional_mean(grid, fit.s0, r.w, e);
    if (x) {
      out.xhat[i] = *x;
    } else {
      out.xhat[i] = r.w;
      out.warnings.push_back("DegenerateDenominator: subject '" + r.id +
                             "' has S0(C)^exp(gamma'v) below 1e-12; imputed value set to C");
    }
  }
  return out;
}

}  // namespace detail

/// Single conditional-mean imputation with the fitted coefficients.
inline ImputedDataset conditional_mean_impute(const LongitudinalDataset& ds, const CoxFit& fit) {
  const auto grid = ImputationGrid::build(ds, fit.s0);
  return detail::impute_with_gamma(ds, fit, grid, fit.gamma);
}

/// Matrix square root factor L with L L' = cov. Falls back to a symmetric
/// eigen factor for positive semidefinite (including zero) matrices.
inline Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
  const Eigen::Index p = cov.rows();
  if (p == 0) return cov;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-12 * scale)
    throw Error(ErrorKind::NonPDCovariance, "coefficient covariance is not positive semidefinite");
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// MCMI draws: gamma* ~ Normal(gamma_hat, Cov(gamma_hat)) per draw, the
/// Breslow baseline held at the point-estimate fit. Draw k uses its own
/// stream derived from (seed, k).
inline std::vector<ImputedDataset> draw_multiple_imputations(const LongitudinalDataset& ds, const CoxFit& fit,
                                                             int m, std::uint64_t rng_seed) {
  if (m < 2) throw Error(ErrorKind::InvalidArgument, "multiple imputation needs m >= 2");
  const Eigen::MatrixXd factor = covariance_factor(fit.gamma_cov);
  const auto grid = ImputationGrid::build(ds, fit.s0);
  std::vector<ImputedDataset> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    Rng rng = make_stream(rng_seed, {static_cast<std::uint64_t>(StreamTag::Imputation), static_cast<std::uint64_t>(k)});
    std::normal_distribution<double> z01(0.0, 1.0);
    Eigen::VectorXd z(fit.gamma.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = z01(rng);
    const Eigen::VectorXd g = fit.gamma + factor * z;
    out.push_back(detail::impute_with_gamma(ds, fit, grid, g));
  }
  return out;
}

}  // namespace ace

#pragma once

// ACE estimator: root of the total efficient-score equation, sandwich
// covariance, identifiability (matrix N) and column-space degeneracy checks.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ace/data.hpp"
#include "ace/error.hpp"
#include "ace/impute.hpp"
#include "ace/numerics.hpp"
#include "ace/score.hpp"

namespace ace {

struct IdentifiabilityReport {
  Eigen::MatrixXd n_matrix;
  double condition_number = std::numeric_limits<double>::infinity();
  bool singular = true;
  std::vector<Eigen::Index> degenerate_columns;
  std::vector<std::string> degenerate_names;
};

struct SandwichCovariance {
  Eigen::MatrixXd a;  // bread: mean score Jacobian
  Eigen::MatrixXd b;  // meat: mean outer product of per-subject scores
  Eigen::MatrixXd v;  // A^-1 B A^-T / n
};

struct AceFit {
  ThetaEstimate theta;
  SandwichCovariance sandwich;
  IdentifiabilityReport identifiability;
  bool sigma2_boundary = false;  // residuals vanish; sigma2 = 0 and no sandwich
};

inline IdentifiabilityReport check_identifiability(const ScoreModel& model,
                                                   const std::vector<std::string>& za_names = {}) {
  const Eigen::Index q = model.dim() - 1;
  IdentifiabilityReport rep;
  rep.n_matrix = Eigen::MatrixXd::Zero(q, q);
  const Eigen::Index pa = q - 1;
  std::vector<bool> in_colspace(static_cast<std::size_t>(pa), true);
  for (const auto& w : model.workspaces()) {
    const Eigen::MatrixXd qa = w.annihilator * w.design;
    rep.n_matrix.noalias() += qa.transpose() * qa;
    for (Eigen::Index k = 0; k < pa; ++k) {
      const double scale = std::max(1.0, w.design.col(k).norm());
      if (qa.col(k).norm() > 1e-8 * scale) in_colspace[static_cast<std::size_t>(k)] = false;
    }
  }
  if (model.size() == 0) std::fill(in_colspace.begin(), in_colspace.end(), false);
  for (Eigen::Index k = 0; k < pa; ++k) {
    if (in_colspace[static_cast<std::size_t>(k)]) {
      rep.degenerate_columns.push_back(k);
      rep.degenerate_names.push_back(static_cast<std::size_t>(k) < za_names.size()
                                         ? za_names[static_cast<std::size_t>(k)]
                                         : "za[" + std::to_string(k) + "]");
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rep.n_matrix);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  rep.singular = !(smax > 0.0) || smin < kRankTolerance * smax;
  rep.condition_number = (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
  return rep;
}

inline IdentifiabilityReport check_identifiability(const ImputedDataset& ds) {
  return check_identifiability(ScoreModel(ds), ds.base.za_names);
}

/// (beta, alpha) solving the first p_a + 1 estimating equations:
/// N^-1 sum_i A_i' Q_i Y_i.
inline Eigen::VectorXd closed_form_beta_alpha(const ScoreModel& model) {
  const Eigen::Index q = model.dim() - 1;
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
  for (const auto& w : model.workspaces()) {
    const Eigen::MatrixXd qa = w.annihilator * w.design;
    n.noalias() += qa.transpose() * qa;
    rhs.noalias() += qa.transpose() * w.y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(n);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < q) throw Error(ErrorKind::SingularN, "matrix N is singular; (beta, alpha) not identifiable");
  return qr.solve(rhs);
}

/// sigma2 solving the last estimating equation at the given coefficients:
/// sum_i |Q_i (Y_i - A_i c)|^2 / sum_i (m_i - r_i).
inline double closed_form_sigma2(const ScoreModel& model, const Eigen::VectorXd& coeffs) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& w : model.workspaces()) {
    num += (w.annihilator * (w.y - w.design * coeffs)).squaredNorm();
    den += static_cast<double>(w.visits() - w.rank);
  }
  if (!(den > 0.0)) throw Error(ErrorKind::SingularN, "no residual degrees of freedom for sigma2");
  return num / den;
}

inline Eigen::VectorXd closed_form_beta_alpha(const ImputedDataset& ds) { return closed_form_beta_alpha(ScoreModel(ds)); }
inline double closed_form_sigma2(const ImputedDataset& ds, const Eigen::VectorXd& coeffs) {
  return closed_form_sigma2(ScoreModel(ds), coeffs);
}

/// Sandwich covariance at theta. The bread uses central differences of the
/// total score (equal to the mean of per-subject difference Jacobians).
inline SandwichCovariance sandwich_covariance(const ScoreModel& model, const Eigen::VectorXd& theta) {
  const double n = static_cast<double>(model.size());
  SandwichCovariance out;
  const VectorFunction total = [&](const Eigen::VectorXd& t) { return model.total(t); };
  out.a = numerical_jacobian(total, theta) / n;
  const Eigen::MatrixXd s = model.per_subject(theta);
  out.b = s.transpose() * s / n;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.a);
  if (!lu.isInvertible()) throw Error(ErrorKind::SingularJacobian, "sandwich bread matrix is singular");
  const Eigen::MatrixXd ainv = lu.inverse();
  out.v = ainv * out.b * ainv.transpose() / n;
  out.v = 0.5 * (out.v + out.v.transpose()).eval();
  return out;
}

struct AceOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

inline std::string degeneracy_message(const IdentifiabilityReport& rep) {
  std::string names;
  for (std::size_t k = 0; k < rep.degenerate_names.size(); ++k) names += (k ? ", " : "") + rep.degenerate_names[k];
  return "fixed-effect column(s) " + names +
         " lie in the random-effect column space for every subject (col(Z^b) when X is observed, col(1, Z^b) "
         "when X is imputed); their estimating equations are identically zero. Remove the column or the "
         "matching random effect.";
}

/// Solves the total estimating equation for theta = (beta, alpha, sigma2).
inline AceFit fit_ace(const ImputedDataset& ds, const std::optional<Eigen::VectorXd>& start = std::nullopt,
                      const AceOptions& opt = {}) {
  const ScoreModel model(ds);
  AceFit fit;
  fit.identifiability = check_identifiability(model, ds.base.za_names);
  if (!fit.identifiability.degenerate_columns.empty())
    throw Error(ErrorKind::DegenerateColumn, degeneracy_message(fit.identifiability));
  if (fit.identifiability.singular)
    throw Error(ErrorKind::SingularN, "matrix N is singular (condition number " +
                                          std::to_string(fit.identifiability.condition_number) + ")");

  const Eigen::Index q = model.dim() - 1;
  Eigen::VectorXd theta0(model.dim());
  if (start) {
    if (start->size() != model.dim()) throw Error(ErrorKind::InvalidArgument, "fit_ace: start has wrong length");
    theta0 = *start;
  } else {
    theta0.head(q) = closed_form_beta_alpha(model);
    theta0(q) = closed_form_sigma2(model, theta0.head(q));
  }
  if (!start) {
    double scale = 0.0;
    for (const auto& w : model.workspaces()) scale += w.yty;
    if (theta0(q) <= 1e-14 * std::max(1.0, scale / static_cast<double>(std::max<std::size_t>(model.size(), 1)))) {
      theta0(q) = 0.0;
      fit.sigma2_boundary = true;
      fit.theta = ThetaEstimate::from_params(theta0);
      fit.theta.cov = Eigen::MatrixXd::Constant(model.dim(), model.dim(), std::numeric_limits<double>::quiet_NaN());
      fit.theta.n_used = model.size();
      fit.theta.converged = true;
      fit.theta.residual_norm = 0.0;
      return fit;
    }
  }
  if (!(theta0(q) > 0.0)) throw Error(ErrorKind::NegativeSigma2, "starting sigma2 is not positive");

  NewtonOptions nopt;
  nopt.tol = opt.tol;
  nopt.max_iter = opt.max_iter;
  nopt.positive_index = q;
  // Every block of the estimating function carries 1/sigma2 or 1/sigma4, so its norm also vanishes as
  // sigma2 -> inf. Solving sigma2 * linear blocks, sigma4 * variance block keeps the finite roots only.
  const VectorFunction scaled = [&](const Eigen::VectorXd& t) {
    Eigen::VectorXd f = model.total(t);
    f.head(q) *= t(q);
    f(q) *= t(q) * t(q);
    return f;
  };
  RootSolveReport root = newton_solve(scaled, theta0, nopt);
  if (!(root.root(q) > 0.0)) throw Error(ErrorKind::NegativeSigma2, "root has sigma2 <= 0");
  root.residual_norm = inf_norm(model.total(root.root));

  fit.sandwich = sandwich_covariance(model, root.root);
  fit.theta = ThetaEstimate::from_params(root.root);
  fit.theta.cov = fit.sandwich.v;
  fit.theta.n_used = model.size();
  fit.theta.converged = root.converged;
  fit.theta.iterations = root.iterations;
  fit.theta.residual_norm = root.residual_norm;
  return fit;
}

/// Wald intervals theta_k +/- z_{(1+level)/2} se_k.
inline std::vector<std::pair<double, double>> wald_intervals(const Eigen::VectorXd& est, const Eigen::VectorXd& se,
                                                             double level = 0.95) {
  const double z = norm_quantile(0.5 + 0.5 * level);
  std::vector<std::pair<double, double>> out;
  for (Eigen::Index k = 0; k < est.size(); ++k) out.emplace_back(est(k) - z * se(k), est(k) + z * se(k));
  return out;
}

}  // namespace ace

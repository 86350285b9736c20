#pragma once

// Numerical kernels: rank-revealing orthogonal projections, damped Newton
// root finding with finite-difference Jacobians, and the standard normal
// distribution functions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include "ace/error.hpp"

namespace ace {

/// Orthogonal projector onto the column space of a matrix.
struct Projector {
  Eigen::MatrixXd p;
  Eigen::Index rank = 0;

  Eigen::MatrixXd annihilator() const {
    return Eigen::MatrixXd::Identity(p.rows(), p.cols()) - p;
  }
};

/// Relative singular-value cutoff below which a direction is treated as null.
inline constexpr double kRankTolerance = 1e-10;

/// Projector onto col(m). Dependent columns are handled through the SVD,
/// so no inverse of m^T m is ever formed.
inline Projector project(const Eigen::MatrixXd& m) {
  const Eigen::Index rows = m.rows();
  Projector out;
  out.p = Eigen::MatrixXd::Zero(rows, rows);
  if (rows == 0 || m.cols() == 0) return out;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  if (!(smax > 0.0)) return out;
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > kRankTolerance * smax) ++r;
  const auto u = svd.matrixU().leftCols(r);
  out.p = u * u.transpose();
  out.rank = r;
  return out;
}

// ---------------------------------------------------------------------------
// Newton root finding

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct RootSolveReport {
  Eigen::VectorXd root;
  double residual_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd jacobian_at_root;
};

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 100;
  int max_halvings = 20;
  /// Coordinate kept strictly above `positive_floor` (a variance parameter).
  std::optional<Eigen::Index> positive_index;
  double positive_floor = 1e-8;
};

/// Central-difference Jacobian with step h_j = max(1e-6 |x_j|, 1e-8).
inline Eigen::MatrixXd numerical_jacobian(const VectorFunction& f, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = std::max(1e-6 * std::abs(x(j)), 1e-8);
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const Eigen::VectorXd fp = f(xp);
    const Eigen::VectorXd fm = f(xm);
    if (j == 0) jac.resize(fp.size(), n);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Damped Newton iteration for f(x) = 0.
///
/// A full step is tried first and halved (up to `max_halvings` times) while
/// the residual does not decrease. Converged means ||f(root)||_inf < tol.
inline RootSolveReport newton_solve(const VectorFunction& f, const Eigen::VectorXd& x0,
                                    const NewtonOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "newton_solve: tol must be positive");
  RootSolveReport rep;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd fx = f(x);
  if (!fx.allFinite()) throw Error(ErrorKind::DivergedNonFinite, "objective is not finite at the start point");
  double norm = inf_norm(fx);

  for (int it = 0;; ++it) {
    if (norm < opt.tol) {
      rep.root = x;
      rep.residual_norm = norm;
      rep.iterations = it;
      rep.converged = true;
      rep.jacobian_at_root = numerical_jacobian(f, x);
      return rep;
    }
    if (it >= opt.max_iter)
      throw Error(ErrorKind::MaxIterationsExceeded,
                  "no convergence after " + std::to_string(it) + " iterations (residual " + std::to_string(norm) + ")");

    const Eigen::MatrixXd jac = numerical_jacobian(f, x);
    if (!jac.allFinite()) throw Error(ErrorKind::DivergedNonFinite, "Jacobian is not finite");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) throw Error(ErrorKind::SingularJacobian, "Jacobian is singular at iteration " + std::to_string(it));
    Eigen::VectorXd step = -lu.solve(fx);

    if (opt.positive_index) {
      const Eigen::Index k = *opt.positive_index;
      if (x(k) + step(k) <= opt.positive_floor) {
        // shorten so the coordinate lands halfway to the floor
        const double room = x(k) - opt.positive_floor;
        const double scale = (room > 0.0 && step(k) < 0.0) ? 0.5 * room / -step(k) : 0.0;
        step *= scale;
      }
    }

    Eigen::VectorXd x_new = x + step;
    Eigen::VectorXd f_new = f(x_new);
    double norm_new = f_new.allFinite() ? inf_norm(f_new) : std::numeric_limits<double>::infinity();
    for (int h = 0; h < opt.max_halvings && !(norm_new < norm); ++h) {
      step *= 0.5;
      x_new = x + step;
      f_new = f(x_new);
      norm_new = f_new.allFinite() ? inf_norm(f_new) : std::numeric_limits<double>::infinity();
    }
    if (!f_new.allFinite()) throw Error(ErrorKind::DivergedNonFinite, "objective became non-finite");
    x = std::move(x_new);
    fx = std::move(f_new);
    norm = norm_new;
  }
}

// ---------------------------------------------------------------------------
// Standard normal

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double norm_pdf(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley correction against norm_cdf.
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::DomainError, "norm_quantile requires 0 < p < 1");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley step
  const double e = norm_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

}  // namespace ace

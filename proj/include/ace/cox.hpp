#pragma once

// Cox proportional-hazards fit of the censored covariate X on V with Breslow
// tie handling, plus the Breslow baseline survival step function.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "ace/error.hpp"

namespace ace {

/// Right-continuous step function S0(t) = exp(-H0(t)).
struct BaselineSurvival {
  std::vector<double> times;   // distinct event times, ascending
  std::vector<double> cumhaz;  // H0 at each time
  std::vector<double> values;  // S0 at each time

  /// Index of the last jump at or before t, or -1 when t precedes every jump.
  std::ptrdiff_t index_at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    return static_cast<std::ptrdiff_t>(it - times.begin()) - 1;
  }

  double cumulative_hazard(double t) const {
    const auto k = index_at(t);
    return k < 0 ? 0.0 : cumhaz[static_cast<std::size_t>(k)];
  }

  /// 1 before the first jump, flat after the last one.
  double operator()(double t) const {
    const auto k = index_at(t);
    return k < 0 ? 1.0 : values[static_cast<std::size_t>(k)];
  }
};

struct CoxFit {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd gamma_cov;
  BaselineSurvival s0;
  double loglik = 0.0;
  double loglik_null = 0.0;
  std::size_t n_events = 0;
  int iterations = 0;

  Eigen::VectorXd se() const { return gamma_cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["gamma"] = std::vector<double>(gamma.data(), gamma.data() + gamma.size());
    const Eigen::VectorXd s = se();
    j["se"] = std::vector<double>(s.data(), s.data() + s.size());
    j["loglik"] = loglik;
    j["n_events"] = n_events;
    j["baseline"] = {{"times", s0.times}, {"survival", s0.values}};
    return j;
  }
};

/// S0(t)^exp(gamma' v).
inline double survival_at(const CoxFit& fit, double t, const Eigen::VectorXd& v) {
  const double h = fit.s0.cumulative_hazard(t);
  if (h == 0.0) return 1.0;
  const double e = fit.gamma.size() ? std::exp(fit.gamma.dot(v)) : 1.0;
  return std::exp(-e * h);
}

namespace detail {

struct PartialLikelihood {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
};

// Breslow partial likelihood, score and observed information. `order` sorts
// subjects by descending w; risk set at t is {j : w_j >= t}.
inline PartialLikelihood cox_partial(const Eigen::VectorXd& w, const std::vector<int>& delta,
                                     const Eigen::MatrixXd& v, const Eigen::VectorXd& gamma,
                                     const std::vector<Eigen::Index>& order) {
  const Eigen::Index n = w.size();
  const Eigen::Index p = v.cols();
  PartialLikelihood out;
  out.score = Eigen::VectorXd::Zero(p);
  out.info = Eigen::MatrixXd::Zero(p, p);

  Eigen::VectorXd eta = p ? Eigen::VectorXd(v * gamma) : Eigen::VectorXd::Zero(n);
  const double shift = eta.maxCoeff();

  double r0 = 0.0;
  Eigen::VectorXd r1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(p, p);

  Eigen::Index a = 0;
  while (a < n) {
    const double t = w(order[static_cast<std::size_t>(a)]);
    Eigen::Index b = a;
    double d = 0.0;
    double eta_events = 0.0;
    Eigen::VectorXd v_events = Eigen::VectorXd::Zero(p);
    while (b < n && w(order[static_cast<std::size_t>(b)]) == t) {
      const Eigen::Index i = order[static_cast<std::size_t>(b)];
      const double e = std::exp(eta(i) - shift);
      r0 += e;
      if (p) {
        r1 += e * v.row(i).transpose();
        r2.noalias() += e * v.row(i).transpose() * v.row(i);
      }
      if (delta[static_cast<std::size_t>(i)] == 1) {
        d += 1.0;
        eta_events += eta(i);
        if (p) v_events += v.row(i).transpose();
      }
      ++b;
    }
    if (d > 0.0) {
      out.loglik += eta_events - d * (std::log(r0) + shift);
      if (p) {
        const Eigen::VectorXd mean = r1 / r0;
        out.score += v_events - d * mean;
        out.info += d * (r2 / r0 - mean * mean.transpose());
      }
    }
    a = b;
  }
  return out;
}

}  // namespace detail

struct CoxOptions {
  int max_iter = 50;
  double score_tol = 1e-8;
  double rel_loglik_tol = 1e-10;
  double separation_bound = 50.0;
};

/// Newton-Raphson fit of the Breslow partial likelihood from gamma = 0.
inline CoxFit fit_cox(const Eigen::VectorXd& w, const std::vector<int>& delta, const Eigen::MatrixXd& v,
                      const CoxOptions& opt = {}) {
  const Eigen::Index n = w.size();
  const Eigen::Index p = v.cols();
  if (static_cast<Eigen::Index>(delta.size()) != n || v.rows() != n)
    throw Error(ErrorKind::InvalidArgument, "fit_cox: w, delta and v disagree in length");
  const auto n_events = static_cast<std::size_t>(std::count(delta.begin(), delta.end(), 1));
  if (n_events == 0) throw Error(ErrorKind::NoEvents, "fit_cox: no uncensored observations");
  if (n < p + 1) throw Error(ErrorKind::InvalidArgument, "fit_cox: need at least p_v + 1 observations");
  if (!w.allFinite() || !v.allFinite()) throw Error(ErrorKind::InvalidArgument, "fit_cox: non-finite input");
  for (Eigen::Index k = 0; k < p; ++k) {
    if ((v.col(k).array() == v(0, k)).all())
      throw Error(ErrorKind::ConstantCovariate, "fit_cox: covariate column " + std::to_string(k) + " is constant");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return w(a) > w(b); });

  CoxFit fit;
  fit.n_events = n_events;
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  auto cur = detail::cox_partial(w, delta, v, gamma, order);
  fit.loglik_null = cur.loglik;
  const double info_null = p ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cur.info).eigenvalues().maxCoeff() : 0.0;

  bool converged = (p == 0);
  int it = 0;
  for (; !converged && it < opt.max_iter; ++it) {
    if (cur.score.cwiseAbs().maxCoeff() < opt.score_tol) {
      converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
      if (gamma.cwiseAbs().maxCoeff() > 0.5 * opt.separation_bound)
        throw Error(ErrorKind::MonotoneLikelihood, "fit_cox: information degenerate at large |gamma| (separation)");
      throw Error(ErrorKind::NonConvergence, "fit_cox: information matrix not positive definite");
    }
    Eigen::VectorXd step = ldlt.solve(cur.score);
    Eigen::VectorXd next = gamma + step;
    auto cand = detail::cox_partial(w, delta, v, next, order);
    for (int h = 0; h < 20 && !(cand.loglik >= cur.loglik); ++h) {
      step *= 0.5;
      next = gamma + step;
      cand = detail::cox_partial(w, delta, v, next, order);
    }
    if (next.cwiseAbs().maxCoeff() > opt.separation_bound)
      throw Error(ErrorKind::MonotoneLikelihood,
                  "fit_cox: |gamma| exceeded " + std::to_string(opt.separation_bound) + " (complete separation)");
    const double rel = std::abs(cand.loglik - cur.loglik) / std::max(1.0, std::abs(cur.loglik));
    gamma = next;
    cur = std::move(cand);
    if (cur.score.cwiseAbs().maxCoeff() < opt.score_tol || rel < opt.rel_loglik_tol) {
      converged = true;
      ++it;
      break;
    }
  }
  if (!converged) throw Error(ErrorKind::NonConvergence, "fit_cox: no convergence in " + std::to_string(opt.max_iter) + " iterations");

  fit.gamma = gamma;
  fit.loglik = cur.loglik;
  fit.iterations = it;
  if (p) {
    // loglik can flatten before |gamma| reaches the bound; a collapsed information says the same thing
    const double info_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cur.info).eigenvalues().minCoeff();
    if (info_min < 1e-6 * info_null)
      throw Error(ErrorKind::MonotoneLikelihood, "fit_cox: information collapsed along a direction (separation)");
    Eigen::LLT<Eigen::MatrixXd> llt(cur.info);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::NonConvergence, "fit_cox: information at the optimum is not positive definite");
    fit.gamma_cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
    fit.gamma_cov = 0.5 * (fit.gamma_cov + fit.gamma_cov.transpose()).eval();
  } else {
    fit.gamma_cov.resize(0, 0);
  }

  // Breslow cumulative hazard, ascending over distinct event times.
  Eigen::VectorXd risk = p ? Eigen::VectorXd((v * gamma).array().exp()) : Eigen::VectorXd::Ones(n);
  double r0 = 0.0;
  std::vector<double> t_desc, jump_desc;
  Eigen::Index a = 0;
  while (a < n) {
    const double t = w(order[static_cast<std::size_t>(a)]);
    double d = 0.0;
    Eigen::Index b = a;
    while (b < n && w(order[static_cast<std::size_t>(b)]) == t) {
      const Eigen::Index i = order[static_cast<std::size_t>(b)];
      r0 += risk(i);
      if (delta[static_cast<std::size_t>(i)] == 1) d += 1.0;
      ++b;
    }
    if (d > 0.0) {
      t_desc.push_back(t);
      jump_desc.push_back(d / r0);
    }
    a = b;
  }
  double h = 0.0;
  for (std::size_t k = t_desc.size(); k-- > 0;) {
    h += jump_desc[k];
    fit.s0.times.push_back(t_desc[k]);
    fit.s0.cumhaz.push_back(h);
    fit.s0.values.push_back(std::exp(-h));
  }
  return fit;
}

}  // namespace ace

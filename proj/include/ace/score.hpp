#pragma once

// Closed-form efficient score vectors for the ACE estimating equation.
//
// For subject i with design A_i = (Z^a_i, s_i - x_i 1) and fixed-effect mean
// zeta_i = A_i (beta, alpha)', let P_i be the projector onto col(Z^b_i) when X
// is observed, or onto col(1, Z^b_i) when X is imputed, and Q_i = I - P_i.
// With E_i = P_i Y_i + Q_i zeta_i and r_i = rank(P_i):
//
//   S_i = sigma^-4 [ sigma^2 Z^a' Q (Y - zeta)
//                    sigma^2 (s - x 1)' Q (Y - zeta)
//                    1/2 {Y'Y - sigma^2 (m - r) - |E|^2} - zeta'(Y - E) ]
//
// The random effects and the imputation error never appear: they live in
// col(P_i) and are annihilated by Q_i.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "ace/data.hpp"
#include "ace/impute.hpp"
#include "ace/numerics.hpp"

namespace ace {

/// Per-subject quantities that do not depend on theta.
struct ScoreWorkspace {
  Eigen::VectorXd y;
  Eigen::MatrixXd design;      // (Z^a, s - x 1), m x (p_a + 1)
  Eigen::MatrixXd projector;   // P
  Eigen::MatrixXd annihilator; // I - P
  Eigen::Index rank = 0;
  double yty = 0.0;
  bool censored = false;

  Eigen::Index visits() const noexcept { return y.size(); }

  /// Builds the workspace; `x` is the observed X (uncensored) or Xhat.
  static ScoreWorkspace build(const SubjectRecord& subj, double x, bool censored) {
    ScoreWorkspace ws;
    const Eigen::Index m = subj.visits();
    const Eigen::Index pa = subj.za.cols();
    ws.y = subj.y;
    ws.yty = subj.y.squaredNorm();
    ws.censored = censored;
    ws.design.resize(m, pa + 1);
    ws.design.leftCols(pa) = subj.za;
    ws.design.col(pa) = subj.s.array() - x;
    Projector p;
    if (censored) {
      Eigen::MatrixXd aug(m, subj.zb.cols() + 1);
      aug.col(0).setOnes();
      aug.rightCols(subj.zb.cols()) = subj.zb;
      p = project(aug);
    } else {
      p = project(subj.zb);
    }
    ws.projector = std::move(p.p);
    ws.rank = p.rank;
    ws.annihilator = Eigen::MatrixXd::Identity(m, m) - ws.projector;
    return ws;
  }

  /// Efficient score at theta = (beta, alpha, sigma2).
  Eigen::VectorXd score(const Eigen::VectorXd& theta) const {
    const Eigen::Index q = design.cols();
    const double sigma2 = theta(q);
    const Eigen::VectorXd zeta = design * theta.head(q);
    const Eigen::VectorXd resid_q = annihilator * (y - zeta);
    const Eigen::VectorXd cond_mean = projector * y + annihilator * zeta;
    const double cond_second = sigma2 * static_cast<double>(visits() - rank) + cond_mean.squaredNorm();

    Eigen::VectorXd out(q + 1);
    out.head(q) = design.transpose() * resid_q / sigma2;
    out(q) = (0.5 * (yty - cond_second) - zeta.dot(y - cond_mean)) / (sigma2 * sigma2);
    return out;
  }
};

/// Score for a subject whose X is observed (X = w).
inline Eigen::VectorXd score_uncensored(const SubjectRecord& subj, const Eigen::VectorXd& theta) {
  return ScoreWorkspace::build(subj, subj.w, false).score(theta);
}

/// Score for a censored subject with imputed value xhat.
inline Eigen::VectorXd score_censored(const SubjectRecord& subj, double xhat, const Eigen::VectorXd& theta) {
  return ScoreWorkspace::build(subj, xhat, true).score(theta);
}

/// Cached workspaces for a whole imputed dataset. Sums are taken in subject
/// order, so totals are reproducible bit for bit.
class ScoreModel {
 public:
  explicit ScoreModel(const ImputedDataset& ds) : p_a_(ds.base.p_a) {
    ws_.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& r = ds.base.subjects[i];
      ws_.push_back(r.delta == 1 ? ScoreWorkspace::build(r, r.w, false)
                                 : ScoreWorkspace::build(r, ds.xhat[i], true));
    }
  }

  Eigen::Index dim() const noexcept { return p_a_ + 2; }
  std::size_t size() const noexcept { return ws_.size(); }
  std::span<const ScoreWorkspace> workspaces() const noexcept { return ws_; }

  Eigen::VectorXd total(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim());
    for (const auto& w : ws_) sum += w.score(theta);
    return sum;
  }

  /// n x dim matrix of per-subject scores.
  Eigen::MatrixXd per_subject(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ws_.size()), dim());
    for (std::size_t i = 0; i < ws_.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = ws_[i].score(theta).transpose();
    return out;
  }

 private:
  Eigen::Index p_a_;
  std::vector<ScoreWorkspace> ws_;
};

/// Sum over subjects of Delta_i S_eff + (1 - Delta_i) S*_eff.
inline Eigen::VectorXd total_estimating_function(const ImputedDataset& ds, const Eigen::VectorXd& theta) {
  return ScoreModel(ds).total(theta);
}

}  // namespace ace

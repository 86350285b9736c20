#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ace;

namespace {

// Oracle: projector through the Moore-Penrose pseudo-inverse, M (M'M)^+ M'.
Eigen::MatrixXd pinv_projector(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd g = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  const double tol = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd inv = es.eigenvalues();
  for (Eigen::Index k = 0; k < inv.size(); ++k) inv(k) = inv(k) > tol ? 1.0 / inv(k) : 0.0;
  const Eigen::MatrixXd ginv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return m * ginv * m.transpose();
}

// Oracle: bisection on norm_cdf.
double bisect_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (norm_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Projector, OnesColumn) {
  const auto p = project(Eigen::MatrixXd::Ones(3, 1));
  EXPECT_EQ(p.rank, 1);
  EXPECT_LT((p.p - Eigen::MatrixXd::Constant(3, 3, 1.0 / 3.0)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Projector, Identity) {
  const auto p = project(Eigen::MatrixXd::Identity(2, 2));
  EXPECT_EQ(p.rank, 2);
  EXPECT_LT((p.p - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Projector, DuplicatedColumnMatchesPseudoInverse) {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Ones(3, 2);
  const auto p = project(m);
  EXPECT_EQ(p.rank, 1);
  EXPECT_LT((p.p - project(Eigen::MatrixXd::Ones(3, 1)).p).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p.p - pinv_projector(m)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Projector, ZeroAndEmptyMatrices) {
  EXPECT_EQ(project(Eigen::MatrixXd::Zero(3, 2)).rank, 0);
  EXPECT_EQ(project(Eigen::MatrixXd(3, 0)).rank, 0);
  EXPECT_LT(project(Eigen::MatrixXd::Zero(3, 2)).p.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Projector, RandomPropertySuite) {
  Rng rng(20240601);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> rows(1, 10), cols(1, 5), kind(0, 3);
  for (int t = 0; t < 1000; ++t) {
    const int m = rows(rng);
    const int k = cols(rng);
    Eigen::MatrixXd a(m, k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) a(i, j) = z(rng);
    const int form = kind(rng);
    if (form == 1 && k >= 2) a.col(k - 1) = a.col(0) * 2.5;  // duplicated direction
    if (form == 2) {                                         // (1_m, Z^b) with Z^b possibly constant
      a.col(0).setOnes();
      if (k >= 2 && z(rng) > 0) a.col(1).setConstant(5.0);
    }
    if (form == 3 && k >= 2) a.col(1).setZero();
    const auto p = project(a);
    const Eigen::MatrixXd q = p.annihilator();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    lu.setThreshold(1e-10);
    EXPECT_EQ(p.rank, lu.rank()) << "trial " << t;
    EXPECT_LT((p.p * p.p - p.p).cwiseAbs().maxCoeff(), 1e-10) << "idempotence, trial " << t;
    EXPECT_LT((p.p - p.p.transpose()).cwiseAbs().maxCoeff(), 1e-12) << "symmetry, trial " << t;
    EXPECT_LT((q * a).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff())) << "trial " << t;
    EXPECT_NEAR(p.p.trace(), static_cast<double>(p.rank), 1e-10) << "trace, trial " << t;
    EXPECT_LT((p.p - pinv_projector(a)).cwiseAbs().maxCoeff(), 1e-8) << "pinv oracle, trial " << t;
  }
}

TEST(Newton, ScalarQuadratic) {
  const auto r = newton_solve([](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x(0) * x(0) - 4.0); },
                              Eigen::VectorXd::Constant(1, 3.0), {1e-12});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.root(0), 2.0, 1e-10);
}

TEST(Newton, LinearSystem) {
  const auto r = newton_solve(
      [](const Eigen::VectorXd& x) {
        Eigen::VectorXd f(2);
        f << x(0) + x(1) - 3.0, x(0) - x(1) - 1.0;
        return f;
      },
      Eigen::VectorXd::Zero(2));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.root(0), 2.0, 1e-10);
  EXPECT_NEAR(r.root(1), 1.0, 1e-10);
  EXPECT_LE(r.iterations, 2);
}

// Documented behavior: the residual is checked before any Jacobian, so a
// start at a root converges in zero iterations even when J is singular there.
TEST(Newton, StartAtRootWithSingularJacobian) {
  const VectorFunction cube = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x(0) * x(0) * x(0)); };
  const auto r = newton_solve(cube, Eigen::VectorXd::Zero(1));
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Newton, SingularJacobianAwayFromRoot) {
  const VectorFunction flat = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd f(2);
    f << x(0) + x(1) - 1.0, 2.0 * (x(0) + x(1)) + 3.0;
    return f;
  };
  try {
    newton_solve(flat, Eigen::VectorXd::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularJacobian);
  }
}

TEST(Newton, NoRootHitsIterationCap) {
  NewtonOptions opt;
  opt.max_iter = 15;
  try {
    newton_solve([](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x(0) * x(0) + 1.0); },
                 Eigen::VectorXd::Constant(1, 0.5), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.kind() == ErrorKind::MaxIterationsExceeded || e.kind() == ErrorKind::SingularJacobian);
  }
}

TEST(Newton, PositivityBarrierKeepsVarianceAboveFloor) {
  // root at s = 0.01; a plain Newton step from s = 1 on f = log(s / 0.01) would overshoot below zero
  NewtonOptions opt;
  opt.positive_index = 0;
  const auto r = newton_solve([](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, 1.0 - 0.01 / x(0)); },
                              Eigen::VectorXd::Constant(1, 1.0), opt);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.root(0), 0.01, 1e-9);
}

TEST(NumericalJacobian, MatchesAnalytic) {
  const VectorFunction f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(2);
    out << std::sin(x(0)) * x(1), std::exp(x(1));
    return out;
  };
  const Eigen::Vector2d x(0.3, 1.2);
  const auto j = numerical_jacobian(f, x);
  EXPECT_NEAR(j(0, 0), std::cos(0.3) * 1.2, 1e-8);
  EXPECT_NEAR(j(0, 1), std::sin(0.3), 1e-8);
  EXPECT_NEAR(j(1, 0), 0.0, 1e-8);
  EXPECT_NEAR(j(1, 1), std::exp(1.2), 1e-7);
}

TEST(Normal, QuantileValues) {
  EXPECT_EQ(norm_quantile(0.5), 0.0);
  EXPECT_NEAR(norm_quantile(0.8), 0.841621, 1e-6);
  EXPECT_NEAR(norm_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(norm_quantile(0.05), -1.6448536269514722, 1e-12);
}

TEST(Normal, QuantileMatchesBisectionOracle) {
  for (double p : {1e-10, 1e-6, 0.001, 0.0242, 0.0243, 0.1, 0.3, 0.5, 0.7, 0.9, 0.9757, 0.999, 1 - 1e-6})
    EXPECT_NEAR(norm_quantile(p), bisect_quantile(p), 1e-9 * std::max(1.0, std::abs(bisect_quantile(p)))) << p;
}

TEST(Normal, CdfQuantileRoundTrip) {
  for (int k = 1; k <= 99; ++k) {
    const double p = k / 100.0;
    EXPECT_NEAR(norm_cdf(norm_quantile(p)), p, 1e-9);
  }
}

TEST(Normal, QuantileDomain) {
  for (double p : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
    try {
      norm_quantile(p);
      FAIL() << p;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DomainError);
    }
  }
}

TEST(Rng, DerivedStreamsAreDeterministicAndDistinct) {
  auto a = make_stream(7, {1, 2});
  auto b = make_stream(7, {1, 2});
  auto c = make_stream(7, {1, 3});
  EXPECT_EQ(a(), b());
  EXPECT_NE(make_stream(7, {1, 2})(), c());
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
}

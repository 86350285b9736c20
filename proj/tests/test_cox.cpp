#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ace;

namespace {

// Oracle: O(n^2) Breslow partial log-likelihood straight from the definition.
double brute_loglik(const Eigen::VectorXd& w, const std::vector<int>& d, const Eigen::MatrixXd& v,
                    const Eigen::VectorXd& g) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (d[static_cast<std::size_t>(i)] != 1) continue;
    double risk = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (w(j) >= w(i)) risk += std::exp(v.row(j).dot(g));
    ll += v.row(i).dot(g) - std::log(risk);
  }
  return ll;
}

// Oracle: Breslow cumulative hazard by direct summation.
double brute_cumhaz(const Eigen::VectorXd& w, const std::vector<int>& d, const Eigen::MatrixXd& v,
                    const Eigen::VectorXd& g, double t) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (d[static_cast<std::size_t>(i)] != 1 || w(i) > t) continue;
    double risk = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (w(j) >= w(i)) risk += std::exp(v.row(j).dot(g));
    h += 1.0 / risk;
  }
  return h;
}

struct Sample {
  Eigen::VectorXd w;
  std::vector<int> d;
  Eigen::MatrixXd v;
};

Sample exponential_sample(int n, const Eigen::VectorXd& gamma, double cens_rate, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::exponential_distribution<double> ex(1.0);
  Sample s;
  s.w.resize(n);
  s.d.resize(static_cast<std::size_t>(n));
  s.v.resize(n, gamma.size());
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < gamma.size(); ++k) s.v(i, k) = z(rng);
    const double x = ex(rng) / std::exp(s.v.row(i).dot(gamma));
    const double c = cens_rate > 0 ? ex(rng) / cens_rate : std::numeric_limits<double>::infinity();
    s.w(i) = std::min(x, c);
    s.d[static_cast<std::size_t>(i)] = x <= c;
  }
  return s;
}

}  // namespace

TEST(Cox, ThreePointClosedFormAndGridSearch) {
  const Eigen::Vector3d w(1, 2, 3);
  const std::vector<int> d{1, 1, 1};
  Eigen::MatrixXd v(3, 1);
  v << 1, 0, 1;
  const auto fit = fit_cox(w, d, v);
  EXPECT_NEAR(fit.gamma(0), -std::log(2.0) / 2.0, 1e-8);

  double best = -1e300, arg = 0.0;
  for (double g = -3.0; g <= 3.0; g += 1e-6) {
    const double ll = brute_loglik(w, d, v, Eigen::VectorXd::Constant(1, g));
    if (ll > best) {
      best = ll;
      arg = g;
    }
  }
  EXPECT_NEAR(fit.gamma(0), arg, 2e-6);
  EXPECT_NEAR(fit.loglik, best, 1e-9);
}

TEST(Cox, TwoPointBinaryCovariateIsMonotone) {
  const Eigen::Vector2d w(1, 2);
  Eigen::MatrixXd v(2, 1);
  v << 1, 0;
  try {
    fit_cox(w, {1, 1}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MonotoneLikelihood);
  }
}

TEST(Cox, ConstantCovariateAndNoEvents) {
  const Eigen::Vector3d w(1, 2, 3);
  try {
    fit_cox(w, {1, 1, 0}, Eigen::MatrixXd::Constant(3, 1, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConstantCovariate);
  }
  Eigen::MatrixXd v(3, 1);
  v << 1, 2, 3;
  try {
    fit_cox(w, {0, 0, 0}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoEvents);
  }
}

TEST(Cox, FlatLikelihoodGivesZero) {
  const Eigen::Vector4d w(1, 1, 2, 2);
  Eigen::MatrixXd v(4, 1);
  v << 1, 0, 1, 0;
  const auto fit = fit_cox(w, {1, 1, 1, 1}, v);
  EXPECT_NEAR(fit.gamma(0), 0.0, 1e-10);
}

TEST(Cox, ScoreOfBruteForceLikelihoodVanishesWithTies) {
  auto s = exponential_sample(300, Eigen::Vector2d(0.7, -0.4), 0.5, 11);
  for (Eigen::Index i = 0; i < s.w.size(); ++i) s.w(i) = std::round(s.w(i) * 10.0) / 10.0;  // force ties
  const auto fit = fit_cox(s.w, s.d, s.v);
  for (Eigen::Index k = 0; k < 2; ++k) {
    Eigen::VectorXd gp = fit.gamma, gm = fit.gamma;
    gp(k) += 1e-5;
    gm(k) -= 1e-5;
    EXPECT_NEAR((brute_loglik(s.w, s.d, s.v, gp) - brute_loglik(s.w, s.d, s.v, gm)) / 2e-5, 0.0, 1e-5);
  }
  EXPECT_NEAR(fit.loglik, brute_loglik(s.w, s.d, s.v, fit.gamma), 1e-8);
  EXPECT_GE(fit.loglik, fit.loglik_null);
  for (double t : {0.05, 0.3, 1.0, 2.5}) {
    EXPECT_NEAR(fit.s0.cumulative_hazard(t), brute_cumhaz(s.w, s.d, s.v, fit.gamma, t), 1e-10);
  }
}

TEST(Cox, BaselineSurvivalStepFunction) {
  auto s = exponential_sample(200, Eigen::VectorXd::Constant(1, 0.5), 0.3, 5);
  const auto fit = fit_cox(s.w, s.d, s.v);
  const double t_min = fit.s0.times.front();
  EXPECT_EQ(survival_at(fit, 0.5 * t_min, Eigen::VectorXd::Constant(1, 1.3)), 1.0);
  for (double t : {0.1, 0.5, 1.5}) EXPECT_DOUBLE_EQ(survival_at(fit, t, Eigen::VectorXd::Zero(1)), fit.s0(t));
  // right-continuous: value at a jump equals the post-jump value
  const double t1 = fit.s0.times[3];
  EXPECT_EQ(fit.s0(t1), fit.s0.values[3]);
  EXPECT_EQ(fit.s0(std::nextafter(t1, 0.0)), fit.s0.values[2]);
  for (std::size_t k = 1; k < fit.s0.values.size(); ++k) EXPECT_LE(fit.s0.values[k], fit.s0.values[k - 1]);
}

TEST(Cox, UnitExponentialSurvivalAtOne) {
  auto s = exponential_sample(5000, Eigen::VectorXd::Constant(1, 0.0), 0.0, 99);
  const auto fit = fit_cox(s.w, s.d, s.v);
  EXPECT_NEAR(survival_at(fit, 1.0, Eigen::VectorXd::Constant(1, 0.4)), std::exp(-1.0), 0.03);
}

TEST(Cox, NullCoefficientCalibration) {
  int inside = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    auto s = exponential_sample(2000, Eigen::VectorXd::Constant(1, 0.0), 1.0 / 3.0, 1000 + r);
    const auto fit = fit_cox(s.w, s.d, s.v);
    if (std::abs(fit.gamma(0)) < 3.0 * fit.se()(0)) ++inside;
  }
  EXPECT_GE(inside, static_cast<int>(0.99 * reps));
}

TEST(Cox, RecoversTrueCoefficients) {
  auto s = exponential_sample(4000, Eigen::Vector2d(1.0, -0.5), 0.5, 3);
  const auto fit = fit_cox(s.w, s.d, s.v);
  EXPECT_NEAR(fit.gamma(0), 1.0, 4 * fit.se()(0));
  EXPECT_NEAR(fit.gamma(1), -0.5, 4 * fit.se()(1));
  const auto j = fit.to_json();
  EXPECT_EQ(j.at("gamma").size(), 2u);
  EXPECT_EQ(j.at("baseline").at("times").size(), fit.s0.times.size());
}

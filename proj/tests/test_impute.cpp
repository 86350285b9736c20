#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ace;

namespace {

SubjectRecord bare(const std::string& id, double w, int delta, Eigen::VectorXd v = Eigen::VectorXd(0)) {
  return test::subject(id, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Ones(2, 1), w,
                       delta, std::move(v));
}

LongitudinalDataset exponential_null_data(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::exponential_distribution<double> ex(1.0);
  std::exponential_distribution<double> cu(0.25);
  std::vector<SubjectRecord> subs;
  for (int i = 0; i < n; ++i) {
    const double x = ex(rng), c = cu(rng);
    subs.push_back(bare(std::to_string(i), std::min(x, c), x <= c));
  }
  auto ds = test::dataset(subs);
  ds.p_v = 0;
  ds.v_names.clear();
  return ds;
}

CoxFit fit(const LongitudinalDataset& ds) { return fit_cox(ds.w(), ds.delta(), ds.v()); }

}  // namespace

TEST(Impute, UncensoredSubjectsKeepTheirTime) {
  auto ds = exponential_null_data(200, 1);
  ds.subjects[0].w = 2.3;
  ds.subjects[0].delta = 1;
  const auto imp = conditional_mean_impute(ds, fit(ds));
  EXPECT_EQ(imp.xhat[0], 2.3);
  EXPECT_FALSE(imp.imputed_flag[0]);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.subjects[i].delta == 1) EXPECT_EQ(imp.xhat[i], ds.subjects[i].w);
    else EXPECT_GE(imp.xhat[i], ds.subjects[i].w);
  }
}

// Oracle: trapezoid on a three-point Breslow curve worked by hand.
// H0 = 1/3 on [1, 3), 4/3 from 3; C = 2 gives 2 + (1 + e^-1) / 2.
TEST(Impute, HandWorkedTrapezoid) {
  auto ds = test::dataset({bare("a", 1.0, 1), bare("b", 2.0, 0), bare("c", 3.0, 1)});
  ds.p_v = 0;
  const auto imp = conditional_mean_impute(ds, fit(ds));
  EXPECT_NEAR(imp.xhat[1], 2.0 + 0.5 * (1.0 + std::exp(-1.0)), 1e-12);
}

// Oracle: E(X | X > C) = C + 1 for a unit exponential.
TEST(Impute, ExponentialClosedForm) {
  auto ds = exponential_null_data(5000, 7);
  ds.subjects[0].w = 0.5;
  ds.subjects[0].delta = 0;
  const auto imp = conditional_mean_impute(ds, fit(ds));
  EXPECT_NEAR(imp.xhat[0], 1.5, 0.05 * 1.5);
}

TEST(Impute, CensoredBeyondLastTimeImputesC) {
  auto ds = exponential_null_data(300, 3);
  double wmax = 0.0;
  for (const auto& r : ds.subjects) wmax = std::max(wmax, r.w);
  ds.subjects[5].w = wmax + 1.0;
  ds.subjects[5].delta = 0;
  const auto imp = conditional_mean_impute(ds, fit(ds));
  EXPECT_EQ(imp.xhat[5], wmax + 1.0);
}

TEST(Impute, DegenerateDenominatorFallsBackToCWithWarning) {
  std::vector<SubjectRecord> subs;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd v(1);
    v << (i % 2 ? 1.0 : -1.0) * (1 + 0.1 * i);
    subs.push_back(bare(std::to_string(i), 1.0 + i, i % 3 != 2, v));
  }
  auto ds = test::dataset(subs);
  CoxFit f = fit(ds);
  f.gamma(0) = 60.0;  // exp(60 * v) overwhelms S0(C)
  const auto imp = conditional_mean_impute(ds, f);
  bool warned = false;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.subjects[i].delta == 0 && ds.subjects[i].v(0) > 0) {
      EXPECT_EQ(imp.xhat[i], ds.subjects[i].w);
      warned = true;
    }
  ASSERT_TRUE(warned);
  ASSERT_FALSE(imp.warnings.empty());
  EXPECT_NE(imp.warnings.front().find("DegenerateDenominator"), std::string::npos);
}

TEST(Impute, MonotoneInTruncationPoint) {
  auto sim = generate_replicate(SimConfig{}, 0);
  auto& ds = sim.data;
  ds.subjects[0].delta = 0;
  ds.subjects[1].delta = 0;
  ds.subjects[1].v = ds.subjects[0].v;
  ds.subjects[0].w = 0.4;
  ds.subjects[1].w = 0.9;
  const auto imp = conditional_mean_impute(ds, fit(ds));
  EXPECT_LE(imp.xhat[0], imp.xhat[1] + 1e-8);
}

TEST(MultipleImputation, DeterministicGivenSeed) {
  const auto sim = generate_replicate(SimConfig{}, 1);
  const auto f = fit(sim.data);
  const auto a = draw_multiple_imputations(sim.data, f, 15, 1234);
  const auto b = draw_multiple_imputations(sim.data, f, 15, 1234);
  const auto c = draw_multiple_imputations(sim.data, f, 15, 1235);
  ASSERT_EQ(a.size(), 15u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].xhat, b[k].xhat);
  EXPECT_NE(a[0].xhat, c[0].xhat);
  EXPECT_NE(a[0].xhat, a[1].xhat);
}

TEST(MultipleImputation, ZeroCovarianceReproducesPointImputation) {
  const auto sim = generate_replicate(SimConfig{}, 2);
  auto f = fit(sim.data);
  f.gamma_cov.setZero();
  const auto point = conditional_mean_impute(sim.data, f);
  for (const auto& d : draw_multiple_imputations(sim.data, f, 4, 9)) EXPECT_EQ(d.xhat, point.xhat);
}

TEST(MultipleImputation, DrawsVaryForCensoredSubject) {
  const auto sim = generate_replicate(SimConfig{}, 3);
  const auto f = fit(sim.data);
  std::size_t target = 0;
  for (std::size_t i = 0; i < sim.data.size(); ++i)
    if (sim.data.subjects[i].delta == 0) {
      target = i;
      break;
    }
  const auto draws = draw_multiple_imputations(sim.data, f, 200, 77);
  double mean = 0.0, ss = 0.0;
  for (const auto& d : draws) mean += d.xhat[target];
  mean /= 200.0;
  for (const auto& d : draws) ss += (d.xhat[target] - mean) * (d.xhat[target] - mean);
  EXPECT_GT(ss / 199.0, 0.0);
}

TEST(MultipleImputation, ArgumentChecks) {
  const auto sim = generate_replicate(SimConfig{}, 4);
  auto f = fit(sim.data);
  try {
    draw_multiple_imputations(sim.data, f, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
  f.gamma_cov(0, 0) = -1.0;
  try {
    draw_multiple_imputations(sim.data, f, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonPDCovariance);
  }
}

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fdimtd/estimation/wls.hpp"
#include "fdimtd/stats/chi2.hpp"
#include "support.hpp"

namespace fdimtd {
namespace {

using testing::case14;
using testing::case14_base_state;

struct NoisyRun {
  std::vector<double> gammas;
  int alarms = 0;
};

NoisyRun residuals(const GridModel& g, const StateVector& truth, int trials,
                   std::uint64_t seed, double tau) {
  AdmittanceSet adm = build_admittance(g);
  Vec h = measurement_fn(adm, truth);
  NoiseModel nm = NoiseModel::from_reference(h, 0.02);
  Rng rng(seed);
  NoisyRun out;
  for (int t = 0; t < trials; ++t) {
    MeasurementVector z = measure(g, adm, truth, nm, rng);
    SeResult se = wls_estimate(g, adm, z.z, z.variance, StateVector::flat(g));
    out.gammas.push_back(se.gamma);
    out.alarms += bdd(se.gamma, tau) == BddDecision::alarm;
  }
  return out;
}

TEST(Wls, NoiselessRecoversState) {
  const GridModel& g = case14();
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    StateVector truth = testing::random_operating_point(g, case14_base_state(), rng);
    Vec z = measurement_fn(g, truth);
    Vec var = Vec::Constant(z.size(), 1e-4);
    SeResult se = wls_estimate(g, z, var);
    EXPECT_TRUE(se.converged);
    EXPECT_LT((se.state.complex() - truth.complex()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(se.gamma, 1e-10);
  }
}

TEST(Wls, MeanResidualMatchesDegreesOfFreedom) {
  NoisyRun r = residuals(case14(), case14_base_state(), 1000, 2, 1e300);
  double mean = 0.0;
  for (double x : r.gammas) mean += x;
  mean /= r.gammas.size();
  EXPECT_NEAR(mean, 82.0, 0.05 * 82.0);
}

TEST(Wls, UnderdeterminedIsRankError) {
  const GridModel& g = case14();
  Vec z = Vec::Zero(20), var = Vec::Ones(20);
  EXPECT_THROW(wls_estimate(g, z, var), RankError);
}

TEST(Bdd, ZeroResidualPasses) { EXPECT_EQ(bdd(0.0, 10.0), BddDecision::pass); }

TEST(Bdd, AlarmRateMatchesFalsePositiveTarget) {
  double tau = chi2_quantile(82, 0.02);
  NoisyRun r = residuals(case14(), case14_base_state(), 5000, 3, tau);
  EXPECT_NEAR(r.alarms / 5000.0, 0.02, 0.007);
}

TEST(Bdd, ResidualsFitChiSquare) {
  NoisyRun r = residuals(case14(), case14_base_state(), 5000, 4, 1e300);
  double d = ks_statistic(r.gammas, [](double x) { return chi2_cdf(82, x); });
  EXPECT_LT(d, ks_critical(r.gammas.size(), 0.01));
}

TEST(Bdd, PerturbedModelKeepsFalsePositiveRate) {
  const GridModel& g = case14();
  // Mid-box perturbation of every D-FACTS branch; truth and model agree.
  Vec b = 0.5 * (g.b_lower() + g.b_upper());
  GridModel moved = apply_setpoint(g, b);
  StateVector truth = solve_power_flow(moved).state;
  double tau = chi2_quantile(82, 0.02);
  NoisyRun r = residuals(moved, truth, 3000, 5, tau);
  EXPECT_NEAR(r.alarms / 3000.0, 0.02, 0.007);
}

TEST(Projectors, IdempotentAnnihilatingWithRankTrace) {
  const GridModel& g = case14();
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    StateVector s = testing::random_operating_point(g, case14_base_state(), rng);
    Vec var = NoiseModel::from_reference(measurement_fn(g, s), 0.02).variance();
    Projectors p = projectors(g, s, var);
    EXPECT_LT((p.s * p.s - p.s).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((p.s * p.h).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(p.s.trace(), 82.0, 1e-6);
    Mat w = p.whitened();
    EXPECT_LT((w - w.transpose()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FixedJacobian, ConvergesToConsistentPoint) {
  const GridModel& g = case14();
  AdmittanceSet adm = build_admittance(g);
  const StateVector& v0 = case14_base_state();
  Mat h0 = state_jacobian(g, adm, v0);
  Rng rng(8);
  StateVector truth = testing::random_operating_point(g, v0, rng, 0.02, 0.01);
  Vec z = measurement_fn(adm, truth);
  Vec var = Vec::Ones(z.size());
  SeResult se = wls_estimate_fixed_jacobian(g, adm, z, var, v0, h0);
  EXPECT_TRUE(se.converged);
  // Stationarity of the frozen normal equations.
  Vec grad = h0.transpose() * se.residual.cwiseQuotient(var);
  EXPECT_LT(grad.lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LT(se.gamma, 1e-12);
}

}  // namespace
}  // namespace fdimtd

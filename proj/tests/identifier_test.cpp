// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fdimtd/identifier/identify.hpp"
#include "support.hpp"

namespace fdimtd {
namespace {

using testing::case14;
using testing::case14_base_state;

struct Fixture {
  const GridModel& g = case14();
  AdmittanceSet adm = build_admittance(case14());
  LstmAeModel det;
  Mat window;
  StateVector v_a;

  explicit Fixture(std::uint64_t seed = 1) {
    Rng rng(seed);
    det = init_model(g.n_meas(), 4, {8, 4}, rng);
    window.resize(g.n_meas(), 4);
    for (int j = 0; j < 4; ++j)
      window.col(j) = measurement_fn(adm, testing::random_operating_point(g, case14_base_state(), rng, 0.02, 0.01));
    det.norm = Normalizer::fit({window});
    det.tau = 1e9;
    v_a = testing::random_operating_point(g, case14_base_state(), rng, 0.05, 0.02);
  }
};

TEST(TapeMeasurement, ValueAndJacobianMatchDirectEvaluation) {
  const GridModel& g = case14();
  AdmittanceSet adm = build_admittance(g);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    StateVector s = testing::random_operating_point(g, case14_base_state(), rng);
    TapeMeasurement tm(g, adm, s);
    Vec x = s.to_rect_free(g);
    Vec w = Vec::Random(g.n_meas());
    ad::Tape t;
    ad::Var xv = t.leaf(x);
    ad::Var z = tm.record(t, xv);
    Vec direct = measurement_fn(adm, s);
    EXPECT_LT((t.value(z) - direct).cwiseAbs().maxCoeff(), 1e-12);
    ad::Var proj = t.matmul(t.constant(w.transpose()), z);
    t.backward(proj);
    Mat jac = testing::fd_jacobian(
        [&](const Vec& y) { return measurement_fn(adm, s.with_rect_free(g, y)); }, x);
    EXPECT_LT(testing::rel_error(t.grad(xv), jac.transpose() * w), 1e-6);
  }
}

TEST(Energy, ZeroPenaltyIsReconstructionLoss) {
  Fixture f;
  IdentifyConfig c;
  c.beta_r = c.beta_i = 0.0;
  Rng rng(3);
  StateVector v = testing::random_operating_point(f.g, case14_base_state(), rng, 0.02, 0.01);
  Mat w = f.window;
  w.col(3) = measurement_fn(f.adm, v);
  double e = energy(f.g, f.adm, f.det, f.window.leftCols(3), v, f.v_a, c);
  EXPECT_NEAR(e, reconstruction_loss(f.det, w), 1e-13);
}

TEST(Energy, PenaltyVanishesAtAttackedEstimate) {
  Fixture f;
  Mat w = f.window;
  w.col(3) = measurement_fn(f.adm, f.v_a);
  double e = energy(f.g, f.adm, f.det, f.window.leftCols(3), f.v_a, f.v_a);
  EXPECT_NEAR(e, reconstruction_loss(f.det, w), 1e-13);
}

TEST(Energy, PenaltyIsWeightedL1) {
  Fixture f;
  f.det.decoder_bypass = true;
  IdentifyConfig c;
  c.beta_r = 0.3;
  c.beta_i = 0.7;
  Vec xa = f.v_a.to_rect_free(f.g);
  Vec x = xa;
  const int n = f.g.n_free();
  x[0] += 0.01;
  x[n + 2] -= 0.02;
  double e = energy(f.g, f.adm, f.det, f.window.leftCols(3), f.v_a.with_rect_free(f.g, x), f.v_a, c);
  EXPECT_NEAR(e, 0.3 * 0.01 + 0.7 * 0.02, 1e-14);
}

TEST(Energy, GradientMatchesFiniteDifferences) {
  Fixture f(4);
  IdentificationProblem prob(f.g, f.adm, f.det, f.window.leftCols(3), f.v_a);
  Rng rng(5);
  Vec x = testing::random_operating_point(f.g, case14_base_state(), rng, 0.02, 0.01)
              .to_rect_free(f.g);
  auto ev = prob.evaluate(x);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    double fd = (prob.evaluate(xp, false).energy - prob.evaluate(xm, false).energy) / (2 * h);
    EXPECT_NEAR(ev.grad[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Identify, StopsAtMinimumIterationsWhenAlreadyNormal) {
  Fixture f;
  f.det.decoder_bypass = true;
  f.det.tau = 0.5;
  IdentificationResult r = identify(f.g, f.adm, f.det, f.window, f.v_a, case14_base_state());
  EXPECT_EQ(r.status, IdentifyStatus::converged);
  EXPECT_EQ(r.iterations, 50);
  EXPECT_TRUE(r.bypass_ae);
  EXPECT_TRUE(r.bypass_bdd);
  EXPECT_EQ(r.z_recovered, measurement_fn(f.adm, r.recovered));
  // c_bar is the attacked estimate minus the recovered state.
  Vec d = f.v_a.to_rect_free(f.g) - r.recovered.to_rect_free(f.g);
  EXPECT_LT((r.c_bar.rect() - d).cwiseAbs().maxCoeff(), 1e-14);
  // The penalty pulls the state toward the attacked estimate.
  double start = (f.v_a.to_rect_free(f.g) - case14_base_state().to_rect_free(f.g)).lpNorm<1>();
  EXPECT_LT(d.lpNorm<1>(), start);
}

TEST(Identify, EnergyTrendIsNonIncreasing) {
  Fixture f(6);
  f.det.tau = 0.0;  // never stops early
  IdentifyConfig c;
  c.ite_max = 120;
  IdentificationResult r = identify(f.g, f.adm, f.det, f.window, f.v_a, case14_base_state(), c);
  EXPECT_EQ(r.status, IdentifyStatus::max_iterations);
  ASSERT_EQ(r.energy_trace.size(), 121u);
  for (std::size_t k = 10; k < r.energy_trace.size(); k += 10) {
    std::vector<double> a(r.energy_trace.begin() + k - 10, r.energy_trace.begin() + k);
    std::vector<double> b(r.energy_trace.begin() + k, r.energy_trace.begin() + std::min(k + 10, r.energy_trace.size()));
    std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
    std::nth_element(b.begin(), b.begin() + b.size() / 2, b.end());
    EXPECT_LE(b[b.size() / 2], a[a.size() / 2] + 1e-12);
  }
  EXPECT_LT(r.energy_trace.back(), r.energy_trace.front());
}

TEST(Identify, DivergenceGuardReportsTrace) {
  Fixture f;
  f.det.decoder_bypass = true;
  f.det.tau = 0.0;
  IdentifyConfig c;
  c.lr = 1.0;
  c.divergence_window = 1;
  StateVector near = f.v_a.with_rect_free(f.g, f.v_a.to_rect_free(f.g) + Vec::Constant(26, 1e-3));
  IdentificationResult r = identify(f.g, f.adm, f.det, f.window, f.v_a, near, c);
  EXPECT_EQ(r.status, IdentifyStatus::diverged);
  EXPECT_GE(r.energy_trace.size(), 2u);
  EXPECT_FALSE(r.bypass_ae);
}

TEST(Identify, RejectsBadSettings) {
  Fixture f;
  IdentifyConfig c;
  c.ite_max = 10;
  EXPECT_THROW(identify(f.g, f.adm, f.det, f.window, f.v_a, f.v_a, c), DomainError);
  EXPECT_THROW(identify(f.g, f.adm, f.det, f.window.leftCols(3), f.v_a, f.v_a), DimensionError);
}

TEST(UncertaintySet, MembershipAndZeroAttackFlag) {
  const GridModel& g = case14();
  Rng rng(7);
  AttackVector c = sample_attack(g, case14_base_state(), 2, {0.2, 0.3}, rng);
  StateVector at = apply_attack(g, case14_base_state(), c);
  UncertaintySet u = uncertainty_set(g, c, at, 0.01);
  EXPECT_TRUE(u.contains(c.rect()));
  EXPECT_FALSE(u.contains_zero_attack);
  Vec angles = c.angle_view(g, case14_base_state());
  EXPECT_LT((u.angle_center - angles).cwiseAbs().maxCoeff(), 1e-12);
  UncertaintySet big = uncertainty_set(g, c, at, 10.0);
  EXPECT_TRUE(big.contains_zero_attack);
  EXPECT_THROW(uncertainty_set(g, c, at, 0.0), DomainError);
}

TEST(Report, JsonFields) {
  Fixture f;
  f.det.decoder_bypass = true;
  f.det.tau = 1.0;
  IdentificationResult r = identify(f.g, f.adm, f.det, f.window, f.v_a, f.v_a);
  nlohmann::json j = identification_to_json(f.g, r, 12);
  for (const char* k : {"timestep", "iterations", "final_loss", "c_bar", "bypass_bdd", "bypass_ae"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["timestep"], 12);
}

}  // namespace
}  // namespace fdimtd

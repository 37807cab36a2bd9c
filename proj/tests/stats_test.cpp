// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include <boost/math/distributions/non_central_chi_squared.hpp>

#include "fdimtd/stats/chi2.hpp"

namespace fdimtd {
namespace {

// Monte Carlo noncentral draws: squared norm of a shifted standard normal.
double mc_tail(int dof, double lambda, double tau, int draws, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  double shift = std::sqrt(lambda);
  int hits = 0;
  for (int d = 0; d < draws; ++d) {
    double y = 0.0;
    for (int i = 0; i < dof; ++i) {
      double e = nd(rng) + (i == 0 ? shift : 0.0);
      y += e * e;
    }
    hits += y >= tau;
  }
  return static_cast<double>(hits) / draws;
}

TEST(Chi2Quantile, MonteCarloTailRate) {
  double tau = chi2_quantile(82, 0.02);
  Rng rng(1);
  std::chi_squared_distribution<double> chi(82.0);
  const int draws = 1000000;
  int hits = 0;
  for (int d = 0; d < draws; ++d) hits += chi(rng) >= tau;
  EXPECT_NEAR(static_cast<double>(hits) / draws, 0.02, 0.001);
}

TEST(Chi2Quantile, MedianNearWilsonHilferty) {
  for (int k : {80, 200, 500}) {
    double med = chi2_quantile(k, 0.5);
    EXPECT_NEAR(med, k - 2.0 / 3.0, 0.01 * k);
  }
}

TEST(Chi2Quantile, RoundTripAndMonotone) {
  double prev = 1e300;
  for (double a : {0.001, 0.01, 0.02, 0.05, 0.2, 0.5, 0.9}) {
    for (int k : {1, 7, 82}) EXPECT_NEAR(chi2_sf(k, chi2_quantile(k, a)), a, 1e-10);
    double t = chi2_quantile(82, a);
    EXPECT_LT(t, prev);
    prev = t;
  }
}

TEST(Chi2Quantile, DomainErrors) {
  EXPECT_THROW(chi2_quantile(0, 0.1), DomainError);
  EXPECT_THROW(chi2_quantile(5, 0.0), DomainError);
  EXPECT_THROW(chi2_quantile(5, 1.0), DomainError);
  EXPECT_THROW(ncx2_sf(5, -1.0, 2.0), DomainError);
}

TEST(Ncx2, CentralReduction) {
  for (double x : {0.5, 5.0, 18.0, 120.0})
    EXPECT_EQ(ncx2_sf(7, 0.0, x), chi2_sf(7, x));
}

TEST(Ncx2, MatchesIndependentImplementation) {
  for (int k : {1, 7, 82}) {
    for (double lam : {0.01, 1.0, 20.0, 150.0, 900.0}) {
      for (double q : {0.1, 0.5, 0.9}) {
        boost::math::non_central_chi_squared d(k, lam);
        double x = boost::math::quantile(d, q);
        double ref = boost::math::cdf(boost::math::complement(d, x));
        EXPECT_NEAR(ncx2_sf(k, lam, x), ref, 1e-10) << k << " " << lam;
      }
    }
  }
}

TEST(Ncx2, MonteCarloOracle) {
  double tau = chi2_quantile(7, 0.02);
  EXPECT_NEAR(ncx2_sf(7, 20.0, tau), mc_tail(7, 20.0, tau, 1000000, 5), 0.003);
}

TEST(Ncx2, MonotoneInNoncentrality) {
  double tau = chi2_quantile(82, 0.02);
  double prev = ncx2_sf(82, 0.0, tau);
  for (double lam = 0.5; lam < 300.0; lam *= 1.3) {
    double v = ncx2_sf(82, lam, tau);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Ncx2, TruncationHorizonConverged) {
  Ncx2Options wide;
  wide.horizon = 2.0;
  for (double lam : {0.3, 10.0, 75.0, 400.0}) {
    for (double x : {3.0, 30.0, 300.0}) {
      EXPECT_NEAR(ncx2_sf(7, lam, x), ncx2_sf(7, lam, x, wide), 1e-12);
    }
  }
}

TEST(LambdaForDetection, MonteCarloDetectionRate) {
  double tau = chi2_quantile(7, 0.02);
  double lam = lambda_for_detection(7, tau, 0.98);
  EXPECT_NEAR(ncx2_sf(7, lam, tau), 0.98, 1e-8);
  EXPECT_NEAR(mc_tail(7, lam, tau, 1000000, 17), 0.98, 0.005);
}

TEST(LambdaForDetection, DegenerateTarget) {
  double tau = chi2_quantile(7, 0.02);
  EXPECT_NEAR(lambda_for_detection(7, tau, 0.02), 0.0, 1e-6);
  EXPECT_THROW(lambda_for_detection(7, tau, 0.01), DomainError);
}

TEST(LambdaForDetection, ExtremeTarget) {
  double tau = chi2_quantile(82, 0.001);
  double lam = lambda_for_detection(82, tau, 0.999999);
  EXPECT_GT(lam, 100.0);
  EXPECT_NEAR(ncx2_sf(82, lam, tau), 0.999999, 1e-6);
}

// The BDD degrees of freedom keep the tail away from 1 over the whole range,
// so the round trip is not limited by double resolution near 1.
TEST(LambdaForDetection, RoundTrip) {
  double tau = chi2_quantile(82, 0.02);
  for (double lam : {0.1, 0.7, 3.0, 12.0, 40.0, 100.0}) {
    double back = lambda_for_detection(82, tau, ncx2_sf(82, lam, tau));
    EXPECT_NEAR(back, lam, 1e-6 * lam);
  }
}

TEST(KolmogorovSmirnov, AcceptsOwnDistribution) {
  Rng rng(3);
  std::chi_squared_distribution<double> chi(82.0);
  std::vector<double> s(5000);
  for (double& v : s) v = chi(rng);
  double d = ks_statistic(s, [](double x) { return chi2_cdf(82, x); });
  EXPECT_LT(d, ks_critical(s.size(), 0.01));
  // A shifted sample must be rejected.
  for (double& v : s) v += 3.0;
  d = ks_statistic(s, [](double x) { return chi2_cdf(82, x); });
  EXPECT_GT(d, ks_critical(s.size(), 0.01));
}

}  // namespace
}  // namespace fdimtd

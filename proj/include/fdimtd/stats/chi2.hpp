// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "fdimtd/core.hpp"

namespace fdimtd {

namespace detail {
inline void check_dof(int dof) {
  if (dof < 1) throw DomainError("degrees of freedom must be at least 1");
}
}  // namespace detail

// Central chi-square tail P(X >= x).
inline double chi2_sf(int dof, double x) {
  detail::check_dof(dof);
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

inline double chi2_cdf(int dof, double x) {
  detail::check_dof(dof);
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * dof, 0.5 * x);
}

// Threshold whose upper tail has probability alpha.
inline double chi2_quantile(int dof, double alpha) {
  detail::check_dof(dof);
  if (!(alpha > 0.0 && alpha < 1.0))
    throw DomainError("false-positive rate must lie in (0, 1)");
  return 2.0 * boost::math::gamma_q_inv(0.5 * dof, alpha);
}

struct Ncx2Options {
  double tail_eps = 1e-14;
  // Multiplies the number of mixture terms kept beyond the stopping rule.
  double horizon = 1.0;
};

// Noncentral chi-square tail as a Poisson(lambda/2) mixture of central
// tails with dof + 2j degrees of freedom. Terms are summed outward from the
// Poisson mode; each direction stops once a geometric bound on the
// remaining weight falls below tail_eps.
inline double ncx2_sf(int dof, double lambda, double x,
                      const Ncx2Options& opt = {}) {
  detail::check_dof(dof);
  if (lambda < 0.0) throw DomainError("noncentrality must be nonnegative");
  if (x <= 0.0) return 1.0;
  if (lambda == 0.0) return chi2_sf(dof, x);
  const double mu = 0.5 * lambda;
  const long mode = static_cast<long>(std::floor(mu));
  auto log_w = [mu](long j) {
    return -mu + static_cast<double>(j) * std::log(mu) - std::lgamma(j + 1.0);
  };
  auto term = [&](long j) {
    return std::exp(log_w(j)) * boost::math::gamma_q(0.5 * dof + j, 0.5 * x);
  };

  // Find stopping indices with the weight-tail rule.
  long hi = mode;
  while (true) {
    double r = mu / static_cast<double>(hi + 1);
    double tail = std::exp(log_w(hi + 1)) / (1.0 - r);
    if (tail < opt.tail_eps) break;
    ++hi;
  }
  long lo = mode;
  while (lo > 0) {
    double r = static_cast<double>(lo - 1) / mu;
    double tail = std::exp(log_w(lo - 1)) / (1.0 - std::min(r, 0.999999));
    if (r < 1.0 && tail < opt.tail_eps) break;
    --lo;
  }
  if (opt.horizon != 1.0) {
    long up = static_cast<long>(std::ceil((hi - mode + 1) * opt.horizon));
    long down = static_cast<long>(std::ceil((mode - lo + 1) * opt.horizon));
    hi = mode + up;
    lo = std::max(0L, mode - down);
  }
  double acc = 0.0;
  // Small terms first for a little extra accuracy.
  for (long j = lo; j < mode; ++j) acc += term(j);
  for (long j = hi; j >= mode; --j) acc += term(j);
  return std::clamp(acc, 0.0, 1.0);
}

// Smallest noncentrality reaching detection probability rho at threshold tau.
inline double lambda_for_detection(int dof, double tau, double rho) {
  detail::check_dof(dof);
  if (!(rho > 0.0 && rho < 1.0))
    throw DomainError("detection target must lie in (0, 1)");
  const double base = chi2_sf(dof, tau);
  if (rho < base - 1e-9)
    throw DomainError("detection target below the central tail: infeasible");
  if (rho <= base) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (ncx2_sf(dof, hi, tau) < rho) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e8) throw DomainError("detection target not reachable");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
    double mid = 0.5 * (lo + hi);
    if (ncx2_sf(dof, mid, tau) < rho)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct DetectionSpec {
  int dof = 1;
  double alpha = 0.02;
  double tau = 0.0;
  double rho = 0.98;
  double lambda = 0.0;

  static DetectionSpec make(int dof, double alpha, double rho) {
    DetectionSpec s;
    s.dof = dof;
    s.alpha = alpha;
    s.rho = rho;
    s.tau = chi2_quantile(dof, alpha);
    s.lambda = lambda_for_detection(dof, s.tau, rho);
    return s;
  }
};

// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> samples, Cdf cdf) {
  if (samples.empty()) throw DomainError("KS test needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double f = cdf(samples[i]);
    d = std::max(d, std::max(f - i / n, (i + 1) / n - f));
  }
  return d;
}

// Asymptotic critical value of the KS statistic at significance level a.
inline double ks_critical(std::size_t n, double a) {
  return std::sqrt(-0.5 * std::log(0.5 * a)) / std::sqrt(static_cast<double>(n));
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include <boost/math/tools/roots.hpp>
#include <Eigen/Eigenvalues>

#include "fdimtd/core.hpp"

namespace fdimtd {

struct TrsSolution {
  Vec argmin;
  double value = 0.0;
  double multiplier = 0.0;  // for the ball constraint
  bool boundary = false;
};

// Exact global minimizer of c'Qc over the ball ||c - center|| <= radius for
// positive semidefinite Q. Stationary points on the sphere satisfy
// (Q + nu I) c = nu center, and ||c(nu) - center|| decreases in nu, so
// a bracketed root find on the secular equation is enough.
inline TrsSolution trust_region_min(const Mat& q, const Vec& center, double radius) {
  if (!(radius > 0.0)) throw DomainError("ball radius must be positive");
  require_dims(q.rows() == q.cols() && q.rows() == center.size(), "TRS dimension mismatch");
  TrsSolution out;
  if (center.norm() <= radius) {
    out.argmin = Vec::Zero(center.size());
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (q + q.transpose()));
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  Vec g = es.eigenvectors().transpose() * center;
  const double lam_max = lam.maxCoeff();
  const double null_tol = 1e-12 * std::max(1.0, lam_max);
  // Nearest point of the null space; zero value if the ball reaches it.
  double dist0 = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam[i] > null_tol) dist0 += g[i] * g[i];
  dist0 = std::sqrt(dist0);
  if (dist0 <= radius) {
    Vec w = g;
    for (Eigen::Index i = 0; i < lam.size(); ++i) w[i] = lam[i] > null_tol ? 0.0 : g[i];
    out.argmin = es.eigenvectors() * w;
    return out;
  }
  auto gap = [&](double nu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      if (lam[i] <= null_tol) continue;
      double d = lam[i] * g[i] / (lam[i] + nu);
      s += d * d;
    }
    return std::sqrt(s) - radius;
  };
  double hi = std::max(1.0, lam_max);
  while (gap(hi) > 0.0) hi *= 2.0;
  double lo = 0.0;
  std::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(b)); };
  auto r = boost::math::tools::toms748_solve(gap, lo, hi, tol, iters);
  const double nu = 0.5 * (r.first + r.second);
  Vec c(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) c[i] = nu * g[i] / (lam[i] + nu);
  out.argmin = es.eigenvectors() * c;
  out.value = (lam.array() * c.array().square()).sum();
  out.multiplier = nu;
  out.boundary = true;
  return out;
}

}  // namespace fdimtd

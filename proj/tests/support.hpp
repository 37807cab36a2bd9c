// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests.

#pragma once

#include <functional>
#include <random>

#include "fdimtd/grid.hpp"

namespace fdimtd::testing {

inline const GridModel& case14() {
  static const GridModel g = load_case(bundled_case14_path());
  return g;
}

inline const StateVector& case14_base_state() {
  static const StateVector s = solve_power_flow(case14()).state;
  return s;
}

// Nearby operating point: base solution with random angle and magnitude
// offsets on free buses.
inline StateVector random_operating_point(const GridModel& g,
                                          const StateVector& base, Rng& rng,
                                          double dtheta = 0.1,
                                          double dvm = 0.05) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec x = base.to_x(g);
  const int n = g.n_free();
  for (int j = 0; j < n; ++j) {
    x[j] += dtheta * u(rng);
    x[n + j] += dvm * u(rng);
  }
  return base.with_x(g, x);
}

// Central-difference Jacobian of a vector function.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                       double h = 1e-6) {
  Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vec xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    j.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

// Max elementwise error scaled by the largest entry of the reference.
inline double rel_error(const Mat& a, const Mat& ref) {
  double scale = std::max(1.0, ref.cwiseAbs().maxCoeff());
  return (a - ref).cwiseAbs().maxCoeff() / scale;
}

inline GridModel two_bus(double r, double x, double tap = 1.0) {
  std::vector<Bus> buses(2);
  buses[0].id = 1;
  buses[0].type = BusType::ref;
  buses[1].id = 2;
  buses[1].type = BusType::pq;
  std::vector<Branch> br{make_branch(1, 0, 1, r, x, tap, true, 0.5)};
  return GridModel(buses, br);
}

}  // namespace fdimtd::testing

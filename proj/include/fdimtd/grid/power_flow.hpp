// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "fdimtd/grid/jacobian.hpp"

namespace fdimtd {

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 20;
};

struct PowerFlowResult {
  StateVector state;
  int iterations = 0;
  double mismatch = 0.0;
};

// Net specified injections (generation minus demand) from the case loads.
inline CVec case_injections(const GridModel& g) {
  CVec s(g.n_bus());
  for (int i = 0; i < g.n_bus(); ++i) s[i] = Complex(-g.bus(i).pd, -g.bus(i).qd);
  return s;
}

// Newton-Raphson in polar coordinates. The reference bus absorbs the slack,
// pv buses keep the magnitude found in `init`, pq buses honour both P and Q.
inline PowerFlowResult solve_power_flow(const GridModel& g, const CVec& s_spec,
                                        const StateVector& init,
                                        const PowerFlowOptions& opt = {}) {
  require_dims(s_spec.size() == g.n_bus(), "injection vector length");
  require_dims(init.size() == g.n_bus(), "initial state length");
  AdmittanceSet adm = build_admittance(g);
  std::vector<int> pvpq, pq;
  for (int i = 0; i < g.n_bus(); ++i) {
    if (g.bus(i).type == BusType::ref) continue;
    pvpq.push_back(i);
    if (g.bus(i).type == BusType::pq) pq.push_back(i);
  }
  const int npv = static_cast<int>(pvpq.size());
  const int npq = static_cast<int>(pq.size());

  Vec vm = init.vm(), va = init.va();
  auto voltages = [&]() {
    CVec v(g.n_bus());
    for (int i = 0; i < g.n_bus(); ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
  };
  auto mismatch = [&](const CVec& v) {
    CVec mis = v.cwiseProduct((adm.ybus * v).conjugate()) - s_spec;
    Vec f(npv + npq);
    for (int a = 0; a < npv; ++a) f[a] = mis[pvpq[a]].real();
    for (int a = 0; a < npq; ++a) f[npv + a] = mis[pq[a]].imag();
    return f;
  };

  CVec v = voltages();
  Vec f = mismatch(v);
  double norm = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
  int it = 0;
  while (norm >= opt.tol) {
    if (it >= opt.max_iter || !std::isfinite(norm))
      throw ConvergenceError("power flow did not converge: mismatch " +
                                 std::to_string(norm) + " after " +
                                 std::to_string(it) + " iterations",
                             norm, it);
    auto cs = detail::complex_sensitivities(adm, v);
    Mat jac(npv + npq, npv + npq);
    for (int r = 0; r < npv; ++r) {
      for (int c = 0; c < npv; ++c) jac(r, c) = cs.dsbus_dva(pvpq[r], pvpq[c]).real();
      for (int c = 0; c < npq; ++c) jac(r, npv + c) = cs.dsbus_dvm(pvpq[r], pq[c]).real();
    }
    for (int r = 0; r < npq; ++r) {
      for (int c = 0; c < npv; ++c) jac(npv + r, c) = cs.dsbus_dva(pq[r], pvpq[c]).imag();
      for (int c = 0; c < npq; ++c) jac(npv + r, npv + c) = cs.dsbus_dvm(pq[r], pq[c]).imag();
    }
    Eigen::PartialPivLU<Mat> lu(jac);
    Vec dx = -lu.solve(f);
    if (!dx.allFinite())
      throw ConvergenceError("power flow Jacobian singular", norm, it);
    for (int a = 0; a < npv; ++a) va[pvpq[a]] += dx[a];
    for (int a = 0; a < npq; ++a) vm[pq[a]] += dx[npv + a];
    v = voltages();
    f = mismatch(v);
    norm = f.lpNorm<Eigen::Infinity>();
    ++it;
  }
  // Re-reference so the slack angle is exactly zero.
  double ref_angle = va[g.ref()];
  if (ref_angle != 0.0) {
    va.array() -= ref_angle;
    v = voltages();
  }
  return {StateVector(v), it, norm};
}

inline PowerFlowResult solve_power_flow(const GridModel& g) {
  return solve_power_flow(g, case_injections(g), StateVector::from_case(g));
}

}  // namespace fdimtd

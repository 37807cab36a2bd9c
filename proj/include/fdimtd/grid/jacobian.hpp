// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fdimtd/grid/measurement.hpp"

namespace fdimtd {

namespace detail {

inline void check_operating_point(const StateVector& s) {
  if (s.complex().cwiseAbs().minCoeff() < 1e-6)
    throw DomainError("voltage magnitude vanishes at the linearization point");
}

// Derivatives of complex injections and flows with respect to all bus
// angles and magnitudes (full N+1 columns).
struct ComplexSens {
  CMat dsbus_dva, dsbus_dvm, dsf_dva, dsf_dvm, dst_dva, dst_dvm;
};

inline ComplexSens complex_sensitivities(const AdmittanceSet& adm,
                                        const CVec& v) {
  const Complex j(0.0, 1.0);
  CVec vnorm = v.array() / v.cwiseAbs().cast<Complex>().array();
  CMat cf = adm.cf.cast<Complex>();
  CMat ct = adm.ct.cast<Complex>();
  CVec ibus = adm.ybus * v;
  CVec i_f = adm.yf * v;
  CVec i_t = adm.yt * v;
  CVec vf = cf * v;
  CVec vt = ct * v;
  auto dv = v.asDiagonal();
  auto dvn = vnorm.asDiagonal();

  ComplexSens s;
  CMat yv = adm.ybus * dv;
  CMat diag_ibus = ibus.asDiagonal();
  s.dsbus_dva = j * (dv * (diag_ibus - yv).conjugate());
  s.dsbus_dvm = dv * (adm.ybus * dvn).conjugate() +
                ibus.conjugate().asDiagonal() * CMat(dvn);

  s.dsf_dva = j * (i_f.conjugate().asDiagonal() * cf * dv -
                   vf.asDiagonal() * (adm.yf * dv).conjugate());
  s.dsf_dvm = i_f.conjugate().asDiagonal() * cf * dvn +
              vf.asDiagonal() * (adm.yf * dvn).conjugate();
  s.dst_dva = j * (i_t.conjugate().asDiagonal() * ct * dv -
                   vt.asDiagonal() * (adm.yt * dv).conjugate());
  s.dst_dvm = i_t.conjugate().asDiagonal() * ct * dvn +
              vt.asDiagonal() * (adm.yt * dvn).conjugate();
  return s;
}

}  // namespace detail

// Measurement Jacobian with respect to [angles, magnitudes] of free buses.
inline Mat state_jacobian(const GridModel& g, const AdmittanceSet& adm,
                          const StateVector& s) {
  detail::check_operating_point(s);
  auto cs = detail::complex_sensitivities(adm, s.complex());
  const int n = g.n_free();
  const int nb = g.n_bus(), m = g.n_branch();
  MeasOffsets off(g);
  Mat h(g.n_meas(), 2 * n);
  const auto& fr = g.free_buses();
  for (int c = 0; c < n; ++c) {
    int col = fr[c];
    h.block(off.p_bus, c, nb, 1) = cs.dsbus_dva.col(col).real();
    h.block(off.p_from, c, m, 1) = cs.dsf_dva.col(col).real();
    h.block(off.p_to, c, m, 1) = cs.dst_dva.col(col).real();
    h.block(off.q_bus, c, nb, 1) = cs.dsbus_dva.col(col).imag();
    h.block(off.q_from, c, m, 1) = cs.dsf_dva.col(col).imag();
    h.block(off.q_to, c, m, 1) = cs.dst_dva.col(col).imag();
    h.block(off.p_bus, n + c, nb, 1) = cs.dsbus_dvm.col(col).real();
    h.block(off.p_from, n + c, m, 1) = cs.dsf_dvm.col(col).real();
    h.block(off.p_to, n + c, m, 1) = cs.dst_dvm.col(col).real();
    h.block(off.q_bus, n + c, nb, 1) = cs.dsbus_dvm.col(col).imag();
    h.block(off.q_from, n + c, m, 1) = cs.dsf_dvm.col(col).imag();
    h.block(off.q_to, n + c, m, 1) = cs.dst_dvm.col(col).imag();
  }
  return h;
}

// Measurement sensitivity to each branch series susceptance, holding
// conductance and tap fixed (dy/db = j).
inline Mat susceptance_jacobian(const GridModel& g, const StateVector& s) {
  const CVec& v = s.complex();
  const int m = g.n_branch();
  const Complex j(0.0, 1.0);
  MeasOffsets off(g);
  Mat h = Mat::Zero(g.n_meas(), m);
  for (int k = 0; k < m; ++k) {
    const Branch& br = g.branch(k);
    Complex vf = v[br.from], vt = v[br.to];
    double t = br.tap;
    Complex dsf = -j * vf * std::conj(vf / (t * t) - vt / t);
    Complex dst = -j * vt * std::conj(vt - vf / t);
    h(off.p_from + k, k) = dsf.real();
    h(off.q_from + k, k) = dsf.imag();
    h(off.p_to + k, k) = dst.real();
    h(off.q_to + k, k) = dst.imag();
    h(off.p_bus + br.from, k) += dsf.real();
    h(off.q_bus + br.from, k) += dsf.imag();
    h(off.p_bus + br.to, k) += dst.real();
    h(off.q_bus + br.to, k) += dst.imag();
  }
  return h;
}

struct Jacobians {
  Mat h_v;  // P x 2N
  Mat h_b;  // P x M
};

inline Jacobians jacobians(const GridModel& g, const StateVector& s) {
  AdmittanceSet adm = build_admittance(g);
  return {state_jacobian(g, adm, s), susceptance_jacobian(g, s)};
}

// From-side active-flow sensitivity to free-bus angles, split into the
// part that does not depend on susceptance and a factor linear in it:
//   H(b) = C - diag(V) diag(b) A_rc
// with V_k = |v_f||v_t|, A_rs = diag(sin(A theta0)) A_r and
// A_rc = diag(1/t) diag(cos(A theta0)) A_r.
struct ActiveFlowJacobianParts {
  Mat c;      // M x N
  Vec v;      // M
  Mat a_r_s;  // M x N
  Mat a_r_c;  // M x N
  Vec b0;

  Mat h(const Vec& b) const {
    require_dims(b.size() == v.size(), "susceptance length != branch count");
    return c - v.cwiseProduct(b).asDiagonal() * a_r_c;
  }
};

inline ActiveFlowJacobianParts active_flow_jacobian(const GridModel& g,
                                                    const StateVector& s) {
  AdmittanceSet adm = build_admittance(g);
  const int m = g.n_branch();
  Vec vm = s.vm(), va = s.va();
  Vec theta = adm.a * va;
  ActiveFlowJacobianParts p;
  p.v.resize(m);
  Vec sin_t(m), cos_t(m), inv_t(m);
  for (int k = 0; k < m; ++k) {
    const Branch& br = g.branch(k);
    p.v[k] = vm[br.from] * vm[br.to];
    sin_t[k] = std::sin(theta[k]);
    cos_t[k] = std::cos(theta[k]);
    inv_t[k] = 1.0 / br.tap;
  }
  p.a_r_s = sin_t.asDiagonal() * adm.a_r;
  p.a_r_c = inv_t.cwiseProduct(cos_t).asDiagonal() * adm.a_r;
  Vec gk = g.conductance();
  p.c = p.v.cwiseProduct(gk).cwiseProduct(inv_t).asDiagonal() * p.a_r_s;
  p.b0 = g.susceptance();
  return p;
}

}  // namespace fdimtd

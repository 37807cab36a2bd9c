// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fdimtd/grid/grid_model.hpp"

namespace fdimtd {

struct AdmittanceSet {
  CMat ybus;  // (N+1) x (N+1)
  CMat yf;    // M x (N+1), from-end currents
  CMat yt;    // M x (N+1), to-end currents
  Mat cf;     // M x (N+1) from-bus incidence
  Mat ct;     // M x (N+1) to-bus incidence
  Mat a;      // cf - ct
  Mat a_r;    // a without the reference column
};

// Branch pi-model without charging or phase shift:
//   [If]   [ y/t^2  -y/t ] [Vf]
//   [It] = [ -y/t    y   ] [Vt]
inline AdmittanceSet build_admittance(const GridModel& grid) {
  const int nb = grid.n_bus();
  const int m = grid.n_branch();
  AdmittanceSet s;
  s.cf = Mat::Zero(m, nb);
  s.ct = Mat::Zero(m, nb);
  s.yf = CMat::Zero(m, nb);
  s.yt = CMat::Zero(m, nb);
  for (int k = 0; k < m; ++k) {
    const Branch& br = grid.branch(k);
    Complex y(br.g, br.b);
    double t = br.tap;
    s.cf(k, br.from) = 1.0;
    s.ct(k, br.to) = 1.0;
    s.yf(k, br.from) = y / (t * t);
    s.yf(k, br.to) = -y / t;
    s.yt(k, br.from) = -y / t;
    s.yt(k, br.to) = y;
  }
  s.ybus = s.cf.transpose().cast<Complex>() * s.yf +
           s.ct.transpose().cast<Complex>() * s.yt;
  s.a = s.cf - s.ct;
  s.a_r.resize(m, grid.n_free());
  const auto& free = grid.free_buses();
  for (int j = 0; j < grid.n_free(); ++j) s.a_r.col(j) = s.a.col(free[j]);
  return s;
}

}  // namespace fdimtd

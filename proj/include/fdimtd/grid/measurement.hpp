// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "fdimtd/grid/admittance.hpp"
#include "fdimtd/grid/state.hpp"

namespace fdimtd {

enum class MeasKind { p_bus, p_from, p_to, q_bus, q_from, q_to };

inline const char* to_string(MeasKind k) {
  static const char* names[] = {"p_bus", "p_from", "p_to",
                                "q_bus", "q_from", "q_to"};
  return names[static_cast<int>(k)];
}

struct MeasDescriptor {
  MeasKind kind;
  int element;  // bus index for injections, branch index for flows
};

// Channel order: P_bus, P_f, P_t, Q_bus, Q_f, Q_t.
inline std::vector<MeasDescriptor> measurement_layout(const GridModel& g) {
  std::vector<MeasDescriptor> d;
  d.reserve(g.n_meas());
  auto add = [&](MeasKind k, int count) {
    for (int i = 0; i < count; ++i) d.push_back({k, i});
  };
  add(MeasKind::p_bus, g.n_bus());
  add(MeasKind::p_from, g.n_branch());
  add(MeasKind::p_to, g.n_branch());
  add(MeasKind::q_bus, g.n_bus());
  add(MeasKind::q_from, g.n_branch());
  add(MeasKind::q_to, g.n_branch());
  return d;
}

// Offsets of each channel group in the stacked vector.
struct MeasOffsets {
  int p_bus, p_from, p_to, q_bus, q_from, q_to;
  explicit MeasOffsets(const GridModel& g) {
    int nb = g.n_bus(), m = g.n_branch();
    p_bus = 0;
    p_from = nb;
    p_to = nb + m;
    q_bus = nb + 2 * m;
    q_from = 2 * nb + 2 * m;
    q_to = 2 * nb + 3 * m;
  }
};

struct MeasurementVector {
  Vec z;
  Vec variance;  // diagonal of R
  std::vector<MeasDescriptor> layout;

  int size() const { return static_cast<int>(z.size()); }
  void check() const {
    require_dims(z.size() == variance.size() &&
                     z.size() == static_cast<Eigen::Index>(layout.size()),
                 "measurement vector, covariance and layout disagree");
    if ((variance.array() <= 0.0).any())
      throw DomainError("measurement variances must be strictly positive");
  }
};

// Complex power injections and both-end flows.
struct PowerFlows {
  CVec s_bus, s_from, s_to;
};

inline PowerFlows power_flows(const AdmittanceSet& adm, const CVec& v) {
  PowerFlows out;
  out.s_bus = v.cwiseProduct((adm.ybus * v).conjugate());
  CVec vf = adm.cf.cast<Complex>() * v;
  CVec vt = adm.ct.cast<Complex>() * v;
  out.s_from = vf.cwiseProduct((adm.yf * v).conjugate());
  out.s_to = vt.cwiseProduct((adm.yt * v).conjugate());
  return out;
}

inline Vec stack_measurements(const PowerFlows& f) {
  const Eigen::Index nb = f.s_bus.size(), m = f.s_from.size();
  Vec z(2 * nb + 4 * m);
  z << f.s_bus.real(), f.s_from.real(), f.s_to.real(), f.s_bus.imag(),
      f.s_from.imag(), f.s_to.imag();
  return z;
}

// Noiseless measurement function h(v).
inline Vec measurement_fn(const AdmittanceSet& adm, const StateVector& s) {
  return stack_measurements(power_flows(adm, s.complex()));
}

inline Vec measurement_fn(const GridModel& g, const StateVector& s) {
  return measurement_fn(build_admittance(g), s);
}

// Per-channel standard deviations sigma_i = scale * max(|z_ref_i|, floor).
// A zero scale still yields the nominal covariance so R stays invertible.
struct NoiseModel {
  Vec sigma;
  double scale = 0.0;

  static NoiseModel from_reference(const Vec& z_ref, double scale,
                                   double floor = 0.01,
                                   double nominal_scale = 0.02) {
    if (scale < 0.0) throw DomainError("noise scale must be nonnegative");
    NoiseModel nm;
    nm.scale = scale;
    double s = scale > 0.0 ? scale : nominal_scale;
    nm.sigma = s * z_ref.cwiseAbs().cwiseMax(floor);
    return nm;
  }

  Vec variance() const { return sigma.cwiseAbs2(); }
};

// z = h(v) + e with e ~ N(0, R).
inline MeasurementVector measure(const GridModel& g, const AdmittanceSet& adm,
                                 const StateVector& s, const NoiseModel& noise,
                                 Rng& rng) {
  MeasurementVector out;
  out.z = measurement_fn(adm, s);
  require_dims(noise.sigma.size() == out.z.size(), "noise model length");
  out.variance = noise.variance();
  out.layout = measurement_layout(g);
  if (noise.scale > 0.0) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.z.size(); ++i)
      out.z[i] += noise.sigma[i] * nd(rng);
  }
  return out;
}

inline MeasurementVector measure(const GridModel& g, const StateVector& s,
                                 const NoiseModel& noise, std::uint64_t seed) {
  Rng rng(seed);
  return measure(g, build_admittance(g), s, noise, rng);
}

// Sum of series losses g |v_f / t - v_t|^2 over all branches.
inline double series_losses(const GridModel& g, const StateVector& s) {
  double acc = 0.0;
  const CVec& v = s.complex();
  for (const Branch& br : g.branches()) {
    Complex u = v[br.from] / br.tap - v[br.to];
    acc += br.g * std::norm(u);
  }
  return acc;
}

}  // namespace fdimtd

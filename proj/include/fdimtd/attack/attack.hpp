// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "fdimtd/estimation/wls.hpp"

namespace fdimtd {

struct StrengthBand {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const StrengthBand&) const = default;
};

// State injection on free buses in rectangular form.
struct AttackVector {
  Vec c_r;                   // length N
  Vec c_i;                   // length N
  std::vector<int> buses;    // attacked bus indices (into the full bus list)
  StrengthBand band;

  static AttackVector zero(const GridModel& g) {
    AttackVector a;
    a.c_r = Vec::Zero(g.n_free());
    a.c_i = Vec::Zero(g.n_free());
    return a;
  }

  Vec rect() const {
    Vec x(c_r.size() + c_i.size());
    x << c_r, c_i;
    return x;
  }

  double norm() const { return std::sqrt(c_r.squaredNorm() + c_i.squaredNorm()); }
  bool is_zero() const { return norm() == 0.0; }

  // Angle injection seen at a given operating point: arg(v + c) - arg(v).
  Vec angle_view(const GridModel& g, const StateVector& at) const {
    const auto& fr = g.free_buses();
    Vec d(g.n_free());
    for (int j = 0; j < g.n_free(); ++j) {
      Complex v = at.complex()[fr[j]];
      Complex w = v + Complex(c_r[j], c_i[j]);
      d[j] = std::arg(w / v);
    }
    return d;
  }

  // Nonzero entries only on attacked buses.
  bool sparsity_ok(const GridModel& g) const {
    const auto& fr = g.free_buses();
    for (int j = 0; j < g.n_free(); ++j) {
      bool attacked = std::find(buses.begin(), buses.end(), fr[j]) != buses.end();
      if (!attacked && (c_r[j] != 0.0 || c_i[j] != 0.0)) return false;
    }
    return true;
  }
};

inline StateVector apply_attack(const GridModel& g, const StateVector& v,
                                const AttackVector& c) {
  return v.with_rect_free(g, v.to_rect_free(g) + c.rect());
}

// a = h(v_a + c) - h(v_a), with whatever model the attacker believes in.
inline Vec craft_fdi(const GridModel& g, const AdmittanceSet& attacker_adm,
                     const StateVector& v_a, const AttackVector& c) {
  if (c.is_zero()) return Vec::Zero(g.n_meas());
  return measurement_fn(attacker_adm, apply_attack(g, v_a, c)) -
         measurement_fn(attacker_adm, v_a);
}

// Random injection on k distinct free buses. Each attacked angle moves by a
// fraction u ~ U(band) of its nominal value and each magnitude by u / 2,
// with independent random signs.
inline AttackVector sample_attack(const GridModel& g, const StateVector& nominal,
                                  int k, StrengthBand band, Rng& rng) {
  if (k < 0 || k > g.n_free())
    throw DomainError("attacked bus count must lie in [0, N]");
  if (!(band.lo >= 0.0 && band.hi >= band.lo))
    throw DomainError("strength band must satisfy 0 <= lo <= hi");
  AttackVector a = AttackVector::zero(g);
  a.band = band;
  if (k == 0) return a;
  std::vector<int> pick(g.n_free());
  std::iota(pick.begin(), pick.end(), 0);
  std::shuffle(pick.begin(), pick.end(), rng);
  pick.resize(k);
  std::sort(pick.begin(), pick.end());
  std::uniform_real_distribution<double> u(band.lo, band.hi);
  std::bernoulli_distribution coin(0.5);
  for (int j : pick) {
    int bus = g.free_buses()[j];
    Complex v = nominal.complex()[bus];
    double sa = coin(rng) ? 1.0 : -1.0;
    double sm = coin(rng) ? 1.0 : -1.0;
    double ang = std::arg(v) * (1.0 + sa * u(rng));
    double mag = std::abs(v) * (1.0 + 0.5 * sm * u(rng));
    Complex d = std::polar(mag, ang) - v;
    a.c_r[j] = d.real();
    a.c_i[j] = d.imag();
    a.buses.push_back(bus);
  }
  return a;
}

enum class IntegrityVerdict { hidden, mtd_detected };

struct IntegrityCheck {
  IntegrityVerdict verdict = IntegrityVerdict::hidden;
  double gamma = 0.0;
  StateVector estimate;
};

// The attacker estimates the state from the hijacked measurement with its
// own (unperturbed) model and flags an inconsistency when the residual
// reaches the BDD threshold.
inline IntegrityCheck attacker_verify(const GridModel& attacker_model,
                                      const AdmittanceSet& attacker_adm,
                                      const Vec& z, const Vec& variance,
                                      double tau, const StateVector& init) {
  SeOptions opt;
  opt.throw_on_failure = false;
  SeResult se = wls_estimate(attacker_model, attacker_adm, z, variance, init, opt);
  IntegrityCheck out;
  out.gamma = se.converged ? se.gamma : std::numeric_limits<double>::infinity();
  out.verdict = out.gamma >= tau ? IntegrityVerdict::mtd_detected
                                 : IntegrityVerdict::hidden;
  out.estimate = se.state;
  return out;
}

inline nlohmann::json attack_to_json(const GridModel& g, const AttackVector& a,
                                     long timestep) {
  std::vector<int> ids;
  for (int b : a.buses) ids.push_back(g.bus(b).id);
  return {{"timestep", timestep},
          {"buses", ids},
          {"c_R", to_std(a.c_r)},
          {"c_I", to_std(a.c_i)},
          {"band", {a.band.lo, a.band.hi}}};
}

inline AttackVector attack_from_json(const GridModel& g, const nlohmann::json& j) {
  AttackVector a;
  a.c_r = from_std(j.at("c_R").get<std::vector<double>>());
  a.c_i = from_std(j.at("c_I").get<std::vector<double>>());
  require_dims(a.c_r.size() == g.n_free() && a.c_i.size() == g.n_free(),
               "campaign record length != N");
  for (int id : j.at("buses").get<std::vector<int>>())
    a.buses.push_back(g.bus_index(id));
  auto band = j.at("band").get<std::vector<double>>();
  if (band.size() == 2) a.band = {band[0], band[1]};
  return a;
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "fdimtd/grid/grid_model.hpp"

namespace fdimtd {

// Complex bus voltages. The estimation state is the 2N real vector
// [angles of free buses, magnitudes of free buses]; the reference bus
// voltage is carried along but never estimated.
class StateVector {
 public:
  StateVector() = default;
  explicit StateVector(CVec v) : v_(std::move(v)) {}

  static StateVector from_polar(const Vec& vm, const Vec& va) {
    require_dims(vm.size() == va.size(), "polar components differ in length");
    CVec v(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i) v[i] = std::polar(vm[i], va[i]);
    return StateVector(v);
  }

  static StateVector from_rect(const Vec& vr, const Vec& vi) {
    require_dims(vr.size() == vi.size(), "rectangular components differ");
    CVec v(vr.size());
    for (Eigen::Index i = 0; i < vr.size(); ++i) v[i] = Complex(vr[i], vi[i]);
    return StateVector(v);
  }

  // Voltage setpoints and angles stored in the case.
  static StateVector from_case(const GridModel& g) {
    Vec vm(g.n_bus()), va(g.n_bus());
    for (int i = 0; i < g.n_bus(); ++i) {
      vm[i] = g.bus(i).vm;
      va[i] = g.bus(i).va;
    }
    return from_polar(vm, va);
  }

  static StateVector flat(const GridModel& g) {
    Vec vm = Vec::Ones(g.n_bus());
    vm[g.ref()] = g.bus(g.ref()).vm;
    return from_polar(vm, Vec::Zero(g.n_bus()));
  }

  int size() const { return static_cast<int>(v_.size()); }
  const CVec& complex() const { return v_; }
  CVec& complex() { return v_; }
  Vec vm() const { return v_.cwiseAbs(); }
  Vec va() const {
    Vec a(v_.size());
    for (Eigen::Index i = 0; i < v_.size(); ++i) a[i] = std::arg(v_[i]);
    return a;
  }
  Vec vr() const { return v_.real(); }
  Vec vi() const { return v_.imag(); }

  // Pack to / unpack from the estimation vector.
  Vec to_x(const GridModel& g) const {
    const auto& fr = g.free_buses();
    const int n = g.n_free();
    Vec x(2 * n);
    Vec a = va(), m = vm();
    for (int j = 0; j < n; ++j) {
      x[j] = a[fr[j]];
      x[n + j] = m[fr[j]];
    }
    return x;
  }

  StateVector with_x(const GridModel& g, const Vec& x) const {
    const auto& fr = g.free_buses();
    const int n = g.n_free();
    require_dims(x.size() == 2 * n, "state vector length != 2N");
    CVec v = v_;
    for (int j = 0; j < n; ++j) v[fr[j]] = std::polar(x[n + j], x[j]);
    return StateVector(v);
  }

  // Rectangular view of free buses: [vr_free, vi_free].
  Vec to_rect_free(const GridModel& g) const {
    const auto& fr = g.free_buses();
    const int n = g.n_free();
    Vec x(2 * n);
    for (int j = 0; j < n; ++j) {
      x[j] = v_[fr[j]].real();
      x[n + j] = v_[fr[j]].imag();
    }
    return x;
  }

  StateVector with_rect_free(const GridModel& g, const Vec& x) const {
    const auto& fr = g.free_buses();
    const int n = g.n_free();
    require_dims(x.size() == 2 * n, "rectangular state length != 2N");
    CVec v = v_;
    for (int j = 0; j < n; ++j) v[fr[j]] = Complex(x[j], x[n + j]);
    return StateVector(v);
  }

  // Reference angle zero and magnitudes inside the operating envelope.
  bool is_valid(const GridModel& g, double lo = 0.5, double hi = 1.5) const {
    if (size() != g.n_bus()) return false;
    if (std::abs(std::arg(v_[g.ref()])) > 1e-12) return false;
    for (Eigen::Index i = 0; i < v_.size(); ++i) {
      double m = std::abs(v_[i]);
      if (!(m >= lo && m <= hi)) return false;
    }
    return true;
  }

 private:
  CVec v_;
};

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fdimtd/autodiff/tape.hpp"

namespace fdimtd::ad {

// Builds a scalar on a tape from a single leaf.
using ScalarBuilder = std::function<Var(Tape&, Var)>;

struct FdReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  // Coordinates where one-sided differences disagree at every step size,
  // i.e. the function has a kink; they are left out of max_rel_error.
  std::vector<Eigen::Index> kinks;
};

inline double eval_scalar(const ScalarBuilder& f, const Mat& x) {
  Tape t;
  return t.scalar(f(t, t.leaf(x)));
}

inline Mat tape_gradient(const ScalarBuilder& f, const Mat& x) {
  Tape t;
  Var leaf = t.leaf(x);
  Var y = f(t, leaf);
  t.backward(y);
  return t.grad(leaf);
}

// Compares the tape gradient with two-sided differences, coordinate by
// coordinate. Relative error is |a - d| / max(1, |a|, |d|).
inline FdReport finite_diff_check(const ScalarBuilder& f, const Mat& x,
                                  double h = 1e-6) {
  FdReport rep;
  Mat analytic = tape_gradient(f, x);
  const double f0 = eval_scalar(f, x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](double delta) {
      Mat p = x;
      p.data()[i] += delta;
      return eval_scalar(f, p);
    };
    double fp = at(h), fm = at(-h);
    double central = (fp - fm) / (2.0 * h);
    // Kink test: the gap between forward and backward slopes shrinks with
    // h for smooth functions but stays put across a kink.
    double gap1 = std::abs((fp - f0) - (f0 - fm)) / h;
    double hs = 0.25 * h;
    double gap2 = std::abs((at(hs) - f0) - (f0 - at(-hs))) / hs;
    double scale = std::max({1.0, std::abs(central), std::abs(analytic.data()[i])});
    if (gap1 > 1e-3 * scale && gap2 > 0.5 * gap1) {
      rep.kinks.push_back(i);
      continue;
    }
    double err = std::abs(analytic.data()[i] - central) / scale;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  return rep;
}

}  // namespace fdimtd::ad

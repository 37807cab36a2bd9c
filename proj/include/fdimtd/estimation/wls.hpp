// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>

#include "fdimtd/grid/jacobian.hpp"

namespace fdimtd {

struct SeOptions {
  double tol = 1e-8;  // infinity norm of the state update
  int max_iter = 50;
  bool throw_on_failure = true;
};

struct SeResult {
  StateVector state;
  double objective = 0.0;  // J = r' R^-1 r
  Vec residual;            // z - h(v_hat)
  double gamma = 0.0;      // ||R^-1/2 r||^2, equal to J
  int iterations = 0;
  bool converged = false;
};

enum class BddDecision { pass, alarm };

inline BddDecision bdd(double gamma, double tau) {
  return gamma >= tau ? BddDecision::alarm : BddDecision::pass;
}

namespace detail {

// Least-squares step for the whitened system, with an observability check.
struct WhitenedSolver {
  Eigen::ColPivHouseholderQR<Mat> qr;
  Vec w_sqrt;

  WhitenedSolver(const Mat& h, const Vec& w_sqrt_in) : w_sqrt(w_sqrt_in) {
    if (h.rows() < h.cols())
      throw RankError("fewer measurements than states: system unobservable");
    qr.compute(w_sqrt.asDiagonal() * h);
    if (qr.rank() < h.cols())
      throw RankError("gain matrix is rank deficient (rank " +
                      std::to_string(qr.rank()) + " of " +
                      std::to_string(h.cols()) + ")");
  }

  Vec solve(const Vec& r) const { return qr.solve(Vec(w_sqrt.cwiseProduct(r))); }
};

inline SeResult finish(SeResult res, const Vec& z, const Vec& h,
                       const Vec& variance) {
  res.residual = z - h;
  res.gamma = res.residual.cwiseAbs2().cwiseQuotient(variance).sum();
  res.objective = res.gamma;
  return res;
}

}  // namespace detail

// Gauss-Newton WLS with a fresh Jacobian every iteration.
inline SeResult wls_estimate(const GridModel& g, const AdmittanceSet& adm,
                             const Vec& z, const Vec& variance,
                             const StateVector& init,
                             const SeOptions& opt = {}) {
  require_dims(z.size() == variance.size(), "z and R disagree");
  if (z.size() < g.n_state())
    throw RankError("fewer measurements than states: system unobservable");
  require_dims(z.size() == g.n_meas(), "measurement length != 2N+4M+2");
  Vec w_sqrt = variance.cwiseSqrt().cwiseInverse();
  SeResult res;
  StateVector s = init;
  Vec x = s.to_x(g);
  Vec hx = measurement_fn(adm, s);
  for (int it = 1; it <= opt.max_iter; ++it) {
    Mat h = state_jacobian(g, adm, s);
    detail::WhitenedSolver solver(h, w_sqrt);
    Vec dx = solver.solve(z - hx);
    x += dx;
    s = s.with_x(g, x);
    hx = measurement_fn(adm, s);
    res.iterations = it;
    if (!dx.allFinite()) break;
    if (dx.lpNorm<Eigen::Infinity>() < opt.tol) {
      res.converged = true;
      break;
    }
  }
  res.state = s;
  res = detail::finish(std::move(res), z, hx, variance);
  if (!res.converged && opt.throw_on_failure)
    throw ConvergenceError("state estimation did not converge", res.gamma,
                           res.iterations);
  return res;
}

inline SeResult wls_estimate(const GridModel& g, const Vec& z,
                             const Vec& variance,
                             std::optional<StateVector> init = std::nullopt,
                             const SeOptions& opt = {}) {
  AdmittanceSet adm = build_admittance(g);
  return wls_estimate(g, adm, z, variance,
                      init ? *init : StateVector::flat(g), opt);
}

// Iterations with the Jacobian frozen at a fixed operating point.
inline SeResult wls_estimate_fixed_jacobian(const GridModel& g,
                                            const AdmittanceSet& adm,
                                            const Vec& z, const Vec& variance,
                                            const StateVector& init,
                                            const Mat& h_fixed,
                                            const SeOptions& opt = {}) {
  require_dims(z.size() == variance.size() && z.size() == h_fixed.rows(),
               "dimension mismatch in fixed-Jacobian estimation");
  Vec w_sqrt = variance.cwiseSqrt().cwiseInverse();
  detail::WhitenedSolver solver(h_fixed, w_sqrt);
  SeResult res;
  StateVector s = init;
  Vec x = s.to_x(g);
  Vec hx = measurement_fn(adm, s);
  for (int it = 1; it <= opt.max_iter; ++it) {
    Vec dx = solver.solve(z - hx);
    x += dx;
    s = s.with_x(g, x);
    hx = measurement_fn(adm, s);
    res.iterations = it;
    if (!dx.allFinite()) break;
    if (dx.lpNorm<Eigen::Infinity>() < opt.tol) {
      res.converged = true;
      break;
    }
  }
  res.state = s;
  res = detail::finish(std::move(res), z, hx, variance);
  if (!res.converged && opt.throw_on_failure)
    throw ConvergenceError("fixed-Jacobian estimation did not converge",
                           res.gamma, res.iterations);
  return res;
}

// Weighted residual projector S = I - H (H' W H)^-1 H' W and its helpers.
struct Projectors {
  Mat s;               // P x P
  Mat h;               // Jacobian used to build it
  Vec variance;        // diagonal of R
  // Whitened form R^-1/2 S R^1/2, an orthogonal projector.
  Mat whitened() const {
    Vec sd = variance.cwiseSqrt();
    return sd.cwiseInverse().asDiagonal() * s * sd.asDiagonal();
  }
};

inline Projectors make_projectors(const Mat& h, const Vec& variance) {
  require_dims(h.rows() == variance.size(), "projector dimension mismatch");
  Vec w_sqrt = variance.cwiseSqrt().cwiseInverse();
  detail::WhitenedSolver solver(h, w_sqrt);
  // H (H'WH)^-1 H'W = H * pinv(W^1/2 H) * W^1/2
  Mat hw = solver.qr.solve(Mat(w_sqrt.asDiagonal()));
  Projectors p;
  p.h = h;
  p.variance = variance;
  p.s = Mat::Identity(h.rows(), h.rows()) - h * hw;
  return p;
}

// Projector at a chosen linearization point. For the honest estimator this
// is the estimate itself; the post-perturbation analysis instead freezes the
// Jacobian of the perturbed model at the pre-perturbation operating point.
inline Projectors projectors(const GridModel& g, const StateVector& at,
                             const Vec& variance) {
  AdmittanceSet adm = build_admittance(g);
  return make_projectors(state_jacobian(g, adm, at), variance);
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdimtd/estimation/wls.hpp"
#include "fdimtd/mtd/sdp.hpp"
#include "fdimtd/mtd/trs.hpp"
#include "fdimtd/stats/chi2.hpp"

namespace fdimtd {

class MtdError : public Error {
 public:
  using Error::Error;
};

// Ball of candidate angle injections, N-dimensional.
struct Ball {
  Vec center;
  double radius = 0.01;
};

// Whitened active-flow model of one MTD decision. Rows are from-side active
// flows, columns are free-bus angles. E(b) = cn - diag(b) vn_arc is the
// post-perturbation Jacobian; h1 = E(b0).
struct MtdInputs {
  Mat h1;
  Mat cn;
  Mat vn_arc;
  Mat h_hid;  // P x M, hiddenness sensitivity
  Vec b0, b_lo, b_hi;
  std::vector<int> dfacts;  // branches that are decision variables
  std::vector<Ball> balls;
  double lambda_c = 0.0;
  int dof = 0;

  int n_branch() const { return static_cast<int>(b0.size()); }
  int n_angle() const { return static_cast<int>(h1.cols()); }
  int n_var() const { return static_cast<int>(dfacts.size()); }

  Mat e(const Vec& b) const {
    require_dims(b.size() == b0.size(), "susceptance length != branch count");
    return cn - b.asDiagonal() * vn_arc;
  }

  // Full branch vector from D-FACTS settings.
  Vec expand(const Vec& u) const {
    require_dims(u.size() == n_var(), "setpoint length != D-FACTS count");
    Vec b = b0;
    for (int k = 0; k < n_var(); ++k) b[dfacts[k]] = u[k];
    return b;
  }
  Vec restrict(const Vec& b) const {
    Vec u(n_var());
    for (int k = 0; k < n_var(); ++k) u[k] = b[dfacts[k]];
    return u;
  }

  bool contains_zero_attack() const {
    for (const Ball& bl : balls)
      if (bl.radius >= bl.center.norm()) return true;
    return false;
  }
};

inline double detection_threshold_lambda(int dof, double alpha, double rho) {
  return lambda_for_detection(dof, chi2_quantile(dof, alpha), rho);
}

// Operator-side inputs at the estimate v_hat of the unperturbed model g.
inline MtdInputs make_mtd_inputs(const GridModel& g, const StateVector& v_hat,
                                 const Vec& variance, std::vector<Ball> balls,
                                 double alpha, double rho) {
  require_dims(variance.size() == g.n_meas(), "variance length != measurement count");
  for (const Ball& b : balls) {
    require_dims(b.center.size() == g.n_free(), "ball center length != N");
    if (!(b.radius > 0.0)) throw DomainError("ball radius must be positive");
  }
  MeasOffsets off(g);
  const int m = g.n_branch();
  ActiveFlowJacobianParts parts = active_flow_jacobian(g, v_hat);
  Vec w = variance.segment(off.p_from, m).cwiseSqrt().cwiseInverse();
  MtdInputs in;
  in.b0 = g.susceptance();
  in.h1 = w.asDiagonal() * parts.h(in.b0);
  in.cn = w.asDiagonal() * parts.c;
  in.vn_arc = w.cwiseProduct(parts.v).asDiagonal() * parts.a_r_c;
  Projectors pr = projectors(g, v_hat, variance);
  Vec wf = variance.cwiseSqrt().cwiseInverse();
  in.h_hid = wf.asDiagonal() * pr.s * susceptance_jacobian(g, v_hat);
  in.b_lo = g.b_lower();
  in.b_hi = g.b_upper();
  in.dfacts = g.dfacts_branches();
  in.balls = std::move(balls);
  in.dof = m - g.n_free();
  if (in.dof < 1) throw RankError("active flows leave no residual degrees of freedom");
  in.lambda_c = detection_threshold_lambda(in.dof, alpha, rho);
  return in;
}

// lambda(z', b0) = ||H_hid (b' - b0)||^2.
inline double hiddenness_lambda(const MtdInputs& in, const Vec& b) {
  return (in.h_hid * (b - in.b0)).squaredNorm();
}

// Q(b') = H1' (I - P_E) H1 with P_E the projector onto range E(b').
inline Mat effectiveness_matrix(const MtdInputs& in, const Vec& b) {
  Mat e = in.e(b);
  Eigen::ColPivHouseholderQR<Mat> qr(e);
  if (qr.rank() < e.cols()) throw RankError("perturbed active-flow Jacobian is rank deficient");
  Mat r = in.h1 - e * qr.solve(in.h1);
  return r.transpose() * r;
}

inline double effectiveness_lambda(const MtdInputs& in, const Vec& b, const Vec& c) {
  require_dims(c.size() == in.n_angle(), "attack length != N");
  return c.dot(effectiveness_matrix(in, b) * c);
}

// Exact worst case over every ball; the smallest ball value wins.
struct InnerResult {
  Vec worst;
  double value = 0.0;
  int ball = 0;
};

inline InnerResult inner_oracle(const MtdInputs& in, const Vec& b) {
  if (in.balls.empty()) throw DomainError("no uncertainty set");
  Mat q = effectiveness_matrix(in, b);
  InnerResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < in.balls.size(); ++j) {
    TrsSolution s = trust_region_min(q, in.balls[j].center, in.balls[j].radius);
    if (s.value < best.value) best = {s.argmin, s.value, static_cast<int>(j)};
  }
  return best;
}

// Linearized Gram: E0'E + E'E0 - E0'E0, exact at b = b_k.
inline Mat gram_update(const MtdInputs& in, const Vec& b, const Vec& b_k) {
  Mat e = in.e(b), e0 = in.e(b_k);
  return e0.transpose() * e + e.transpose() * e0 - e0.transpose() * e0;
}

enum class LmiStage { one, two };

// Variable layout and unit scaling of an assembled program.
struct LmiLayout {
  int n_u = 0;       // D-FACTS settings
  int n_nu = 0;      // one multiplier per ball
  int objective = 0; // omega (stage one) or phi (stage two)
  double value_scale = 1.0;   // omega = value_scale * scaled omega
  double hidden_scale = 1.0;  // phi = hidden_scale * scaled phi
};

struct AssembledLmi {
  sdp::Problem problem;
  LmiLayout layout;
};

namespace detail {

inline double spectral_norm(const Mat& a) {
  if (!a.size()) return 0.0;
  return Eigen::JacobiSVD<Mat>(a).singularValues()[0];
}

}  // namespace detail

// Stage one maximizes omega; stage two minimizes phi with omega fixed.
// Units are rescaled so the data blocks are of order one.
inline AssembledLmi build_lmi(const MtdInputs& in, const Vec& b_k, LmiStage stage,
                              double omega_fixed = 0.0) {
  require_dims(b_k.size() == in.n_branch(), "linearization point length != M");
  if (in.balls.empty()) throw DomainError("no uncertainty set");
  const int n = in.n_angle(), d = in.n_var(), j_balls = static_cast<int>(in.balls.size());
  const double s = std::max(detail::spectral_norm(in.h1), 1e-300);
  double t = 0.0;
  for (const Ball& b : in.balls) t = std::max({t, b.center.norm(), b.radius});
  AssembledLmi out;
  out.layout = {d, j_balls, d + j_balls, s * s * t * t, 1.0};
  sdp::Problem& p = out.problem;
  p = sdp::Problem(d + j_balls + 1);
  const int obj = out.layout.objective;
  p.objective()[obj] = stage == LmiStage::one ? 1.0 : -1.0;

  // Box bounds and nonnegative multipliers.
  const int lp = p.add_block(2 * d + j_balls, true);
  for (int k = 0; k < d; ++k) {
    const int br = in.dfacts[k];
    p.add_entry(k, lp, 2 * k, 2 * k, 1.0);
    p.add_entry(-1, lp, 2 * k, 2 * k, -in.b_lo[br]);
    p.add_entry(k, lp, 2 * k + 1, 2 * k + 1, -1.0);
    p.add_entry(-1, lp, 2 * k + 1, 2 * k + 1, in.b_hi[br]);
  }
  for (int j = 0; j < j_balls; ++j) p.add_entry(d + j, lp, 2 * d + j, 2 * d + j, 1.0);

  const Mat h = in.h1 / s, c_n = in.cn / s, v_n = in.vn_arc / s;
  Vec b_fixed = b_k;
  for (int k : in.dfacts) b_fixed[k] = 0.0;
  Mat e_const = c_n - b_fixed.asDiagonal() * v_n;
  Mat e0 = c_n - b_k.asDiagonal() * v_n;
  Mat hth = h.transpose() * h;
  hth = 0.5 * (hth + hth.transpose()).eval();
  const Mat cross_const = h.transpose() * e_const;
  const Mat upd_const = e0.transpose() * e_const + e_const.transpose() * e0 - e0.transpose() * e0;
  const double omega_scaled = omega_fixed / out.layout.value_scale;

  for (int j = 0; j < j_balls; ++j) {
    const Vec cb = in.balls[j].center / t;
    const double rr = in.balls[j].radius / t;
    const int blk = p.add_block(1 + 2 * n);
    const int nu = d + j;
    p.add_entry(nu, blk, 0, 0, cb.squaredNorm() - rr * rr);
    if (stage == LmiStage::one) p.add_entry(obj, blk, 0, 0, -1.0);
    else p.add_entry(-1, blk, 0, 0, -omega_scaled);
    p.add_submatrix(nu, blk, 0, 1, cb.transpose());
    p.add_submatrix(nu, blk, 1, 1, Mat::Identity(n, n));
    p.add_submatrix(-1, blk, 1, 1, hth);
    p.add_submatrix(-1, blk, 1, 1 + n, cross_const);
    p.add_submatrix(-1, blk, 1 + n, 1 + n, 0.5 * (upd_const + upd_const.transpose()));
    for (int k = 0; k < d; ++k) {
      const int br = in.dfacts[k];
      Mat dk_cross = -h.row(br).transpose() * v_n.row(br);
      Mat dk_upd = -(e0.row(br).transpose() * v_n.row(br));
      p.add_submatrix(k, blk, 1, 1 + n, dk_cross);
      p.add_submatrix(k, blk, 1 + n, 1 + n, dk_upd + dk_upd.transpose());
    }
  }

  if (stage == LmiStage::two) {
    // ||L (u - u0)||^2 <= phi through a Schur complement on the identity,
    // with L the triangular factor of H_hid restricted to D-FACTS columns.
    Mat hd(in.h_hid.rows(), d);
    for (int k = 0; k < d; ++k) hd.col(k) = in.h_hid.col(in.dfacts[k]);
    Eigen::HouseholderQR<Mat> qr(hd);
    Mat l = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
    const double ls = std::max(detail::spectral_norm(l), 1e-300);
    l /= ls;
    out.layout.hidden_scale = ls * ls;
    const int blk = p.add_block(1 + d);
    p.add_entry(obj, blk, 0, 0, 1.0);
    p.add_submatrix(-1, blk, 1, 1, Mat::Identity(d, d));
    Vec u0 = in.restrict(in.b0);
    p.add_submatrix(-1, blk, 0, 1, -(l * u0).transpose());
    for (int k = 0; k < d; ++k) p.add_submatrix(k, blk, 0, 1, l.col(k).transpose());
  }
  return out;
}

// The frozen-b' dual of the inner problem with the exact Gram block; its
// optimum equals the inner value by strong duality.
inline AssembledLmi build_frozen_dual(const MtdInputs& in, const Vec& b, int ball = 0) {
  const int n = in.n_angle();
  const Ball& bl = in.balls.at(ball);
  const double s = std::max(detail::spectral_norm(in.h1), 1e-300);
  const double t = std::max(bl.center.norm(), bl.radius);
  AssembledLmi out;
  out.layout = {0, 1, 1, s * s * t * t, 1.0};
  sdp::Problem& p = out.problem;
  p = sdp::Problem(2);
  p.objective()[1] = 1.0;
  const int lp = p.add_block(1, true);
  p.add_entry(0, lp, 0, 0, 1.0);
  const Mat h = in.h1 / s, e = in.e(b) / s;
  const Vec cb = bl.center / t;
  const double rr = bl.radius / t;
  const int blk = p.add_block(1 + 2 * n);
  p.add_entry(0, blk, 0, 0, cb.squaredNorm() - rr * rr);
  p.add_entry(1, blk, 0, 0, -1.0);
  p.add_submatrix(0, blk, 0, 1, cb.transpose());
  p.add_submatrix(0, blk, 1, 1, Mat::Identity(n, n));
  Mat hth = h.transpose() * h;
  p.add_submatrix(-1, blk, 1, 1, 0.5 * (hth + hth.transpose()));
  p.add_submatrix(-1, blk, 1, 1 + n, h.transpose() * e);
  Mat g = e.transpose() * e;
  p.add_submatrix(-1, blk, 1 + n, 1 + n, 0.5 * (g + g.transpose()));
  return out;
}

struct MtdConfig {
  int runs = 15;
  int ite_one = 100;
  double tol_one = 0.1;
  int ite_two = 100;
  double tol_two = 1.0;
  std::uint64_t seed = 0;
  // Stage two targets omega slightly above the floor so solver tolerance
  // cannot eat into the guarantee.
  double target_margin = 1e-3;
  // In best-effort mode the target backs off from the stage-one optimum,
  // which otherwise has no strictly feasible neighborhood.
  double best_effort_backoff = 1e-3;
  sdp::Options solver;

  void validate() const {
    if (runs < 1 || ite_one < 0 || ite_two < 0 || !(tol_one >= 0.0) || !(tol_two >= 0.0))
      throw DomainError("invalid MTD iteration settings");
  }
};

struct TraceEntry {
  std::string stage;
  int run = 0;
  int iter = 0;
  double value = 0.0;
  std::string status;
  double wall_ms = 0.0;
};

inline nlohmann::json trace_to_json(const TraceEntry& t) {
  return {{"stage", t.stage}, {"run", t.run}, {"iter", t.iter},
          {"omega_or_phi", t.value}, {"solver_status", t.status}, {"wall_ms", t.wall_ms}};
}

struct StageOneRun {
  Vec b;                       // full branch vector
  double omega = -std::numeric_limits<double>::infinity();
  std::vector<double> omegas;  // per iteration
  bool ok = false;
};

struct StageTwoRun {
  Vec b;
  double phi = std::numeric_limits<double>::infinity();
  std::vector<double> phis;
  bool ok = false;
};

struct MtdSetpoint {
  Vec b;
  double omega_star = 0.0;    // best stage-one certificate
  double omega_target = 0.0;  // floor used in stage two
  double phi_star = std::numeric_limits<double>::infinity();
  bool best_effort = false;
  bool contains_zero_attack = false;
  bool stage_two_ran = false;
  Vec stage_one_b;
  std::vector<StageOneRun> stage_one;
  std::vector<StageTwoRun> stage_two;
  std::vector<TraceEntry> trace;
  std::vector<std::string> warnings;
};

namespace detail {

inline bool improved_enough(double gain, double value, double tol, double lambda_c) {
  // Absolute near the threshold, relative far above it.
  return gain > tol * std::max(1.0, std::abs(value) / std::max(lambda_c, 1e-12));
}

inline Vec random_in_box(const MtdInputs& in, Rng& rng) {
  Vec b = in.b0;
  for (int k : in.dfacts) {
    std::uniform_real_distribution<double> u(in.b_lo[k], in.b_hi[k]);
    b[k] = u(rng);
  }
  return b;
}

}  // namespace detail

// One stage-one iteration from linearization point b_k.
struct IterationResult {
  sdp::Solution sol;
  Vec b;
  double value = 0.0;
};

inline IterationResult solve_stage_one_iteration(const MtdInputs& in, const Vec& b_k,
                                                 const sdp::Options& opt = {}) {
  AssembledLmi lmi = build_lmi(in, b_k, LmiStage::one);
  IterationResult r;
  r.sol = sdp::solve(lmi.problem, opt);
  r.b = in.expand(r.sol.y.head(in.n_var()));
  r.value = r.sol.y[lmi.layout.objective] * lmi.layout.value_scale;
  return r;
}

inline IterationResult solve_stage_two_iteration(const MtdInputs& in, const Vec& b_k,
                                                 double omega, const sdp::Options& opt = {}) {
  AssembledLmi lmi = build_lmi(in, b_k, LmiStage::two, omega);
  IterationResult r;
  r.sol = sdp::solve(lmi.problem, opt);
  r.b = in.expand(r.sol.y.head(in.n_var()));
  r.value = r.sol.y[lmi.layout.objective] * lmi.layout.hidden_scale;
  return r;
}

inline std::vector<StageOneRun> stage_one(const MtdInputs& in, const MtdConfig& cfg,
                                          std::vector<TraceEntry>* trace = nullptr) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<StageOneRun> runs;
  for (int run = 0; run < cfg.runs; ++run) {
    StageOneRun r;
    Vec b_k = detail::random_in_box(in, rng);
    double omega_k = 0.0;
    for (int k = 0; k <= cfg.ite_one; ++k) {
      IterationResult it = solve_stage_one_iteration(in, b_k, cfg.solver);
      if (trace)
        trace->push_back({"one", run, k, it.value, sdp::to_string(it.sol.status), it.sol.wall_ms});
      if (it.sol.status != sdp::Status::optimal) break;
      r.ok = true;
      r.b = it.b;
      r.omega = it.value;
      r.omegas.push_back(it.value);
      b_k = it.b;
      if (!detail::improved_enough(it.value - omega_k, it.value, cfg.tol_one, in.lambda_c)) break;
      omega_k = it.value;
    }
    runs.push_back(std::move(r));
  }
  bool any = false;
  for (const auto& r : runs) any = any || r.ok;
  if (!any) throw MtdError("every stage-one run failed");
  return runs;
}

inline MtdSetpoint stage_two(const MtdInputs& in, std::vector<StageOneRun> runs,
                             const MtdConfig& cfg, std::vector<TraceEntry> trace = {}) {
  MtdSetpoint out;
  out.trace = std::move(trace);
  int best = -1;
  for (std::size_t j = 0; j < runs.size(); ++j)
    if (runs[j].ok && (best < 0 || runs[j].omega > runs[best].omega)) best = static_cast<int>(j);
  if (best < 0) throw MtdError("stage two needs at least one stage-one result");
  out.omega_star = runs[best].omega;
  out.stage_one_b = runs[best].b;
  std::vector<int> seeds;
  if (in.lambda_c > out.omega_star) {
    out.best_effort = true;
    seeds = {best};
    out.omega_target = out.omega_star > 0.0 ? out.omega_star * (1.0 - cfg.best_effort_backoff)
                                             : out.omega_star;
    out.warnings.push_back("best-effort mode: worst-case detectability " +
                           std::to_string(out.omega_star) + " below threshold " +
                           std::to_string(in.lambda_c));
  } else {
    for (std::size_t j = 0; j < runs.size(); ++j)
      if (runs[j].ok && runs[j].omega >= in.lambda_c) seeds.push_back(static_cast<int>(j));
    out.omega_target = in.lambda_c * (1.0 + cfg.target_margin);
  }
  int winner = -1;
  for (int seed : seeds) {
    StageTwoRun r;
    Vec b_k = runs[seed].b;
    double phi_k = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= cfg.ite_two; ++k) {
      IterationResult it = solve_stage_two_iteration(in, b_k, out.omega_target, cfg.solver);
      out.trace.push_back({"two", seed, k, it.value, sdp::to_string(it.sol.status), it.sol.wall_ms});
      if (it.sol.status != sdp::Status::optimal) break;
      r.ok = true;
      r.b = it.b;
      r.phi = it.value;
      r.phis.push_back(it.value);
      b_k = it.b;
      if (phi_k - it.value <= cfg.tol_two) break;
      phi_k = it.value;
    }
    out.stage_two.push_back(r);
    if (r.ok && (winner < 0 || r.phi < out.stage_two[winner].phi))
      winner = static_cast<int>(out.stage_two.size()) - 1;
  }
  out.stage_one = std::move(runs);
  if (winner < 0) {
    out.warnings.push_back("every stage-two solve failed; using the best stage-one setpoint");
    out.b = out.stage_one_b;
    out.phi_star = hiddenness_lambda(in, out.b);
    return out;
  }
  out.stage_two_ran = true;
  out.b = out.stage_two[winner].b;
  out.phi_star = out.stage_two[winner].phi;
  return out;
}

inline MtdSetpoint run_mtd(const MtdInputs& in, const MtdConfig& cfg) {
  cfg.validate();
  if (in.contains_zero_attack()) {
    MtdSetpoint out;
    out.b = in.b0;
    out.stage_one_b = in.b0;
    out.contains_zero_attack = true;
    out.best_effort = true;
    out.phi_star = 0.0;
    out.warnings.push_back("uncertainty set contains the zero attack; no perturbation can help");
    return out;
  }
  std::vector<TraceEntry> trace;
  auto runs = stage_one(in, cfg, &trace);
  return stage_two(in, std::move(runs), cfg, std::move(trace));
}

// Always-on comparison: stage one only, one ball per free bus at delta e_i.
inline std::vector<Ball> robust_baseline_balls(int n_angle, double delta, double radius) {
  std::vector<Ball> balls;
  for (int i = 0; i < n_angle; ++i) {
    Ball b;
    b.center = Vec::Zero(n_angle);
    b.center[i] = delta;
    b.radius = radius;
    balls.push_back(b);
  }
  return balls;
}

inline Vec robust_baseline_setpoint(const MtdInputs& in, const MtdConfig& cfg,
                                    double* omega = nullptr) {
  auto runs = stage_one(in, cfg);
  int best = -1;
  for (std::size_t j = 0; j < runs.size(); ++j)
    if (runs[j].ok && (best < 0 || runs[j].omega > runs[best].omega)) best = static_cast<int>(j);
  if (omega) *omega = runs[best].omega;
  return runs[best].b;
}

}  // namespace fdimtd

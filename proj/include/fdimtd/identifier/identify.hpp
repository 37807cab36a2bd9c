// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdimtd/attack/attack.hpp"
#include "fdimtd/autodiff/adam.hpp"
#include "fdimtd/detector/lstm_ae.hpp"

namespace fdimtd {

// Measurement function in rectangular coordinates, recorded on a tape. The
// leaf is the free-bus vector [vr_free; vi_free]; the reference bus enters as
// a constant.
class TapeMeasurement {
 public:
  TapeMeasurement(const GridModel& g, const AdmittanceSet& adm, const StateVector& ref_state)
      : n_free_(g.n_free()) {
    sel_ = selection(g);
    ref_r_ = ref_part(g, ref_state.vr());
    ref_i_ = ref_part(g, ref_state.vi());
    g_bus_ = adm.ybus.real();
    b_bus_ = adm.ybus.imag();
    g_f_ = Mat(adm.yf.real());
    b_f_ = Mat(adm.yf.imag());
    g_t_ = Mat(adm.yt.real());
    b_t_ = Mat(adm.yt.imag());
    cf_ = adm.cf;
    ct_ = adm.ct;
  }

  ad::Var record(ad::Tape& t, ad::Var x) const {
    ad::Var xr = t.slice_rows(x, 0, n_free_);
    ad::Var xi = t.slice_rows(x, n_free_, n_free_);
    ad::Var sel = t.constant(sel_);
    ad::Var vr = t.add(t.matmul(sel, xr), t.constant(ref_r_));
    ad::Var vi = t.add(t.matmul(sel, xi), t.constant(ref_i_));
    auto current = [&](const Mat& gm, const Mat& bm, ad::Var& ir, ad::Var& ii) {
      ad::Var gc = t.constant(gm), bc = t.constant(bm);
      ir = t.sub(t.matmul(gc, vr), t.matmul(bc, vi));
      ii = t.add(t.matmul(bc, vr), t.matmul(gc, vi));
    };
    // S = V conj(I): P = vr ir + vi ii, Q = vi ir - vr ii.
    auto power = [&](ad::Var ur, ad::Var ui, ad::Var ir, ad::Var ii, ad::Var& p, ad::Var& q) {
      p = t.add(t.mul(ur, ir), t.mul(ui, ii));
      q = t.sub(t.mul(ui, ir), t.mul(ur, ii));
    };
    ad::Var ir, ii, pb, qb, pf, qf, pt, qt;
    current(g_bus_, b_bus_, ir, ii);
    power(vr, vi, ir, ii, pb, qb);
    current(g_f_, b_f_, ir, ii);
    ad::Var cf = t.constant(cf_), ct = t.constant(ct_);
    power(t.matmul(cf, vr), t.matmul(cf, vi), ir, ii, pf, qf);
    current(g_t_, b_t_, ir, ii);
    power(t.matmul(ct, vr), t.matmul(ct, vi), ir, ii, pt, qt);
    return t.concat_rows({pb, pf, pt, qb, qf, qt});
  }

 private:
  static Mat selection(const GridModel& g) {
    Mat e = Mat::Zero(g.n_bus(), g.n_free());
    for (int j = 0; j < g.n_free(); ++j) e(g.free_buses()[j], j) = 1.0;
    return e;
  }
  static Vec ref_part(const GridModel& g, const Vec& full) {
    Vec r = Vec::Zero(g.n_bus());
    r[g.ref()] = full[g.ref()];
    return r;
  }

  int n_free_;
  Mat sel_;
  Vec ref_r_, ref_i_;
  Mat g_bus_, b_bus_, g_f_, b_f_, g_t_, b_t_, cf_, ct_;
};

struct IdentifyConfig {
  double lr = 0.005;
  double beta_r = 0.1;
  double beta_i = 0.1;
  int ite_min = 50;
  int ite_max = 1000;
  int divergence_window = 50;  // consecutive energy increases that abort

  void validate() const {
    if (ite_min < 0 || ite_max < std::max(1, ite_min) || !(lr > 0.0) || divergence_window < 1 ||
        !(beta_r >= 0.0) || !(beta_i >= 0.0))
      throw DomainError("invalid identification iteration settings");
  }
};

enum class IdentifyStatus { converged, max_iterations, diverged };

inline const char* to_string(IdentifyStatus s) {
  switch (s) {
    case IdentifyStatus::converged: return "converged";
    case IdentifyStatus::max_iterations: return "max_iterations";
    case IdentifyStatus::diverged: return "diverged";
  }
  return "?";
}

struct IdentificationResult {
  StateVector recovered;
  Vec z_recovered;        // h(recovered), noiseless
  AttackVector c_bar;     // attacked estimate minus recovered state
  double final_loss = 0.0;
  double final_energy = 0.0;
  int iterations = 0;
  IdentifyStatus status = IdentifyStatus::max_iterations;
  bool bypass_bdd = true;
  bool bypass_ae = false;
  std::vector<double> energy_trace;
  std::vector<double> loss_trace;
};

// Energy evaluator for one alarmed window. The detector is causal, so the
// first T-1 steps are run once and only the last step is re-recorded.
class IdentificationProblem {
 public:
  IdentificationProblem(const GridModel& g, const AdmittanceSet& adm,
                        const LstmAeModel& det, const Mat& prefix,
                        const StateVector& v_attacked, IdentifyConfig cfg = {})
      : g_(g), det_(det), meas_(g, adm, v_attacked), v_a_(v_attacked),
        x_a_(v_attacked.to_rect_free(g)), cfg_(cfg) {
    require_dims(prefix.rows() == det.input_dim && prefix.cols() == det.window - 1,
                 "identification needs a P x (T-1) prefix");
    require_dims(det.input_dim == g.n_meas(), "detector width != measurement count");
    NumericOps ops;
    states_ = zero_states(ops, det.params, 1);
    Mat u = det.norm.normalize(prefix);
    prefix_sum_ = 0.0;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      Mat x = u.col(j);
      Mat y = det.decoder_bypass ? x : network_step(ops, det.params, x, states_);
      prefix_sum_ += (y - x).squaredNorm();
    }
    inv_scale_ = det.norm.scale.cwiseInverse();
  }

  struct Eval {
    double energy = 0.0;
    double loss = 0.0;
    Vec grad;
  };

  // Energy, reconstruction loss and gradient at x = [vr_free; vi_free].
  Eval evaluate(const Vec& x, bool with_grad = true) const {
    ad::Tape t;
    ad::Var xv = t.leaf(x);
    ad::Var z = meas_.record(t, xv);
    ad::Var u = t.mul(t.sub(z, t.constant(det_.norm.mean)), t.constant(inv_scale_));
    ad::Var err;
    if (det_.decoder_bypass) {
      err = t.constant(Mat::Zero(1, 1));
    } else {
      TapeOps ops{t};
      NetParams<ad::Var> p;
      for (const auto& L : det_.params.lstm)
        p.lstm.push_back({t.constant(L.w), t.constant(L.u), t.constant(L.b), L.hid});
      p.dense_w = t.constant(det_.params.dense_w);
      p.dense_b = t.constant(det_.params.dense_b);
      std::vector<CellState<ad::Var>> st;
      for (const auto& s : states_) st.push_back({t.constant(s.h), t.constant(s.c)});
      err = t.sq_norm(t.sub(network_step(ops, p, u, st), u));
    }
    const double denom = static_cast<double>(det_.window) * det_.input_dim;
    ad::Var loss = t.scale(t.add(err, t.constant(Mat::Constant(1, 1, prefix_sum_))), 1.0 / denom);
    const int n = g_.n_free();
    ad::Var dx = t.sub(xv, t.constant(x_a_));
    ad::Var pen = t.add(t.scale(t.l1_norm(t.slice_rows(dx, 0, n)), cfg_.beta_r),
                        t.scale(t.l1_norm(t.slice_rows(dx, n, n)), cfg_.beta_i));
    ad::Var e = t.add(loss, pen);
    Eval out;
    out.energy = t.scalar(e);
    out.loss = t.scalar(loss);
    if (with_grad) {
      t.backward(e);
      out.grad = t.grad(xv);
    }
    return out;
  }

  const Vec& attacked_point() const { return x_a_; }

 private:
  const GridModel& g_;
  const LstmAeModel& det_;
  TapeMeasurement meas_;
  StateVector v_a_;
  Vec x_a_;
  IdentifyConfig cfg_;
  std::vector<CellState<Mat>> states_;
  double prefix_sum_ = 0.0;
  Vec inv_scale_;
};

// Energy of a candidate state for the alarmed window.
inline double energy(const GridModel& g, const AdmittanceSet& adm,
                     const LstmAeModel& det, const Mat& prefix,
                     const StateVector& v, const StateVector& v_attacked,
                     const IdentifyConfig& cfg = {}) {
  IdentificationProblem prob(g, adm, det, prefix, v_attacked, cfg);
  return prob.evaluate(v.to_rect_free(g), false).energy;
}

// Adam descent on the energy from a warm start. The last column of `window`
// is the alarmed measurement and is replaced by h(v).
inline IdentificationResult identify(const GridModel& g, const AdmittanceSet& adm,
                                     const LstmAeModel& det, const Mat& window,
                                     const StateVector& v_attacked,
                                     const StateVector& warm_start,
                                     const IdentifyConfig& cfg = {}) {
  require_dims(window.cols() == det.window, "window length != detector T");
  cfg.validate();
  IdentificationProblem prob(g, adm, det, window.leftCols(det.window - 1), v_attacked, cfg);
  Vec x = warm_start.size() == g.n_bus() ? warm_start.to_rect_free(g) : prob.attacked_point();
  Mat xm = x;
  ad::AdamState adam({&xm}, ad::AdamConfig{cfg.lr});
  IdentificationResult res;
  double prev = std::numeric_limits<double>::infinity();
  int rises = 0;
  res.status = IdentifyStatus::max_iterations;
  for (int it = 0;; ++it) {
    auto ev = prob.evaluate(xm.col(0));
    res.energy_trace.push_back(ev.energy);
    res.loss_trace.push_back(ev.loss);
    res.final_energy = ev.energy;
    res.final_loss = ev.loss;
    res.iterations = it;
    if (it >= cfg.ite_min && ev.loss < det.tau) {
      res.status = IdentifyStatus::converged;
      break;
    }
    rises = ev.energy > prev ? rises + 1 : 0;
    prev = ev.energy;
    if (rises >= cfg.divergence_window) {
      res.status = IdentifyStatus::diverged;
      break;
    }
    if (it >= cfg.ite_max) break;
    adam.step({&xm}, {Mat(ev.grad)});
  }
  res.recovered = v_attacked.with_rect_free(g, xm.col(0));
  res.z_recovered = measurement_fn(adm, res.recovered);
  res.c_bar = AttackVector::zero(g);
  Vec d = prob.attacked_point() - xm.col(0);
  const int n = g.n_free();
  res.c_bar.c_r = d.head(n);
  res.c_bar.c_i = d.tail(n);
  for (int j = 0; j < n; ++j)
    if (d[j] != 0.0 || d[n + j] != 0.0) res.c_bar.buses.push_back(g.free_buses()[j]);
  res.bypass_bdd = true;
  res.bypass_ae = res.final_loss < det.tau;
  return res;
}

// Ball of candidate attacks around the identified vector. The MTD consumes
// the angle-injection view of the center.
struct UncertaintySet {
  Vec center;          // rectangular, 2N
  Vec angle_center;    // angle view at the attacked estimate, N
  double radius = 0.01;
  bool contains_zero_attack = false;

  bool contains(const Vec& c) const { return (c - center).norm() <= radius; }
};

inline UncertaintySet uncertainty_set(const GridModel& g, const AttackVector& c_bar,
                                      const StateVector& at, double radius = 0.01) {
  if (!(radius > 0.0)) throw DomainError("uncertainty radius must be positive");
  UncertaintySet u;
  u.center = c_bar.rect();
  // c_bar is measured from the recovered state; view it from there.
  StateVector base = at.with_rect_free(g, at.to_rect_free(g) - u.center);
  u.angle_center = c_bar.angle_view(g, base);
  u.radius = radius;
  u.contains_zero_attack = radius >= u.angle_center.norm();
  return u;
}

inline nlohmann::json identification_to_json(const GridModel& g,
                                             const IdentificationResult& r, long timestep) {
  return {{"timestep", timestep},
          {"iterations", r.iterations},
          {"status", to_string(r.status)},
          {"final_loss", r.final_loss},
          {"c_bar", attack_to_json(g, r.c_bar, timestep)},
          {"bypass_bdd", r.bypass_bdd},
          {"bypass_ae", r.bypass_ae}};
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// One execution cycle per test step: detect, identify, perturb, verify,
// revert.

#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "fdimtd/attack/attack.hpp"
#include "fdimtd/harness/dataset.hpp"

namespace fdimtd {

inline double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

using AttackPlan = std::vector<std::optional<AttackVector>>;  // indexed by step

// Attack decisions for steps in [begin, end); other steps stay clean.
inline AttackPlan plan_attacks(const GridModel& g, const Dataset& d, int begin, int end,
                               const CampaignConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution hit(c.probability);
  std::uniform_int_distribution<int> buses(c.min_buses, c.max_buses);
  AttackPlan plan(static_cast<std::size_t>(d.size()));
  for (int t = std::max(0, begin); t < std::min(end, d.size()); ++t) {
    if (!hit(rng)) continue;
    plan[t] = sample_attack(g, d.states[t], buses(rng), {c.band_lo, c.band_hi}, rng);
  }
  return plan;
}

struct EpisodeRecord {
  int t = 0;
  bool attacked = false;
  Vec attack;  // rectangular injection, empty when not attacked
  double score = 0.0;
  double tau = 0.0;
  bool alarm = false;
  double gamma_pre = 0.0;
  bool bdd_pre = false;

  bool identified = false;
  Vec c_bar;
  int id_iterations = 0;
  std::string id_status;
  double id_loss = 0.0;
  bool bypass_bdd = false;
  bool bypass_ae = false;
  double c_error = nan_value();

  bool mtd = false;
  Vec b;
  double omega_star = 0.0;
  double omega_target = 0.0;
  double phi_star = 0.0;
  double lambda_c = 0.0;
  double inner_value = 0.0;
  double min_sampled_effectiveness = nan_value();
  double hidden_lambda = 0.0;
  double hidden_lambda_stage_one = nan_value();
  double ratio = 0.0;
  bool best_effort = false;
  bool contains_zero = false;
  bool stage_two_ran = false;

  int draws = 0;
  double bdd_post_rate = nan_value();
  double attacker_rate = nan_value();
  double attacker_rate_stage_one = nan_value();
  double robust_bdd_rate = nan_value();

  double ms_detect = 0.0, ms_identify = 0.0, ms_mtd = 0.0, ms_verify = 0.0;
  std::vector<std::string> warnings;
  std::string error;
};

namespace detail {

inline nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.begin(), v.end()); }
inline Vec json_vec(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}
inline nlohmann::json num_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
inline double json_num(const nlohmann::json& j, const char* k) {
  return j.contains(k) && j.at(k).is_number() ? j.at(k).get<double>() : nan_value();
}

}  // namespace detail

inline nlohmann::json episode_to_json(const EpisodeRecord& r) {
  using detail::num_json;
  using detail::vec_json;
  nlohmann::json j = {{"t", r.t},
                      {"attacked", r.attacked},
                      {"attack", vec_json(r.attack)},
                      {"score", r.score},
                      {"tau", num_json(r.tau)},
                      {"alarm", r.alarm},
                      {"gamma_pre", r.gamma_pre},
                      {"bdd_pre", r.bdd_pre},
                      {"draws", r.draws},
                      {"robust_bdd_rate", num_json(r.robust_bdd_rate)},
                      {"timings_ms",
                       {{"detect", r.ms_detect}, {"identify", r.ms_identify}, {"mtd", r.ms_mtd},
                        {"verify", r.ms_verify}}},
                      {"warnings", r.warnings},
                      {"error", r.error}};
  if (r.identified)
    j["identification"] = {{"c_bar", vec_json(r.c_bar)},   {"iterations", r.id_iterations},
                           {"status", r.id_status},        {"final_loss", r.id_loss},
                           {"bypass_bdd", r.bypass_bdd},   {"bypass_ae", r.bypass_ae},
                           {"c_error", num_json(r.c_error)}};
  if (r.mtd)
    j["mtd"] = {{"b", vec_json(r.b)},
                {"omega_star", r.omega_star},
                {"omega_target", r.omega_target},
                {"phi_star", num_json(r.phi_star)},
                {"lambda_c", r.lambda_c},
                {"inner_value", r.inner_value},
                {"min_sampled_effectiveness", num_json(r.min_sampled_effectiveness)},
                {"hidden_lambda", r.hidden_lambda},
                {"hidden_lambda_stage_one", num_json(r.hidden_lambda_stage_one)},
                {"ratio", r.ratio},
                {"best_effort", r.best_effort},
                {"contains_zero_attack", r.contains_zero},
                {"stage_two_ran", r.stage_two_ran},
                {"bdd_post_rate", num_json(r.bdd_post_rate)},
                {"attacker_rate", num_json(r.attacker_rate)},
                {"attacker_rate_stage_one", num_json(r.attacker_rate_stage_one)}};
  return j;
}

inline EpisodeRecord episode_from_json(const nlohmann::json& j) {
  using detail::json_num;
  using detail::json_vec;
  EpisodeRecord r;
  try {
    r.t = j.at("t").get<int>();
    r.attacked = j.at("attacked").get<bool>();
    r.attack = json_vec(j.at("attack"));
    r.score = j.at("score").get<double>();
    r.tau = json_num(j, "tau");
    r.alarm = j.at("alarm").get<bool>();
    r.gamma_pre = j.at("gamma_pre").get<double>();
    r.bdd_pre = j.at("bdd_pre").get<bool>();
    r.draws = j.value("draws", 0);
    r.robust_bdd_rate = json_num(j, "robust_bdd_rate");
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.error = j.value("error", std::string());
    if (j.contains("timings_ms")) {
      const auto& tm = j.at("timings_ms");
      r.ms_detect = tm.value("detect", 0.0);
      r.ms_identify = tm.value("identify", 0.0);
      r.ms_mtd = tm.value("mtd", 0.0);
      r.ms_verify = tm.value("verify", 0.0);
    }
    if (j.contains("identification")) {
      const auto& id = j.at("identification");
      r.identified = true;
      r.c_bar = json_vec(id.at("c_bar"));
      r.id_iterations = id.at("iterations").get<int>();
      r.id_status = id.at("status").get<std::string>();
      r.id_loss = id.at("final_loss").get<double>();
      r.bypass_bdd = id.at("bypass_bdd").get<bool>();
      r.bypass_ae = id.at("bypass_ae").get<bool>();
      r.c_error = json_num(id, "c_error");
    }
    if (j.contains("mtd")) {
      const auto& m = j.at("mtd");
      r.mtd = true;
      r.b = json_vec(m.at("b"));
      r.omega_star = m.at("omega_star").get<double>();
      r.omega_target = m.at("omega_target").get<double>();
      r.phi_star = json_num(m, "phi_star");
      r.lambda_c = m.at("lambda_c").get<double>();
      r.inner_value = m.at("inner_value").get<double>();
      r.min_sampled_effectiveness = json_num(m, "min_sampled_effectiveness");
      r.hidden_lambda = m.at("hidden_lambda").get<double>();
      r.hidden_lambda_stage_one = json_num(m, "hidden_lambda_stage_one");
      r.ratio = m.at("ratio").get<double>();
      r.best_effort = m.at("best_effort").get<bool>();
      r.contains_zero = m.at("contains_zero_attack").get<bool>();
      r.stage_two_ran = m.at("stage_two_ran").get<bool>();
      r.bdd_post_rate = json_num(m, "bdd_post_rate");
      r.attacker_rate = json_num(m, "attacker_rate");
      r.attacker_rate_stage_one = json_num(m, "attacker_rate_stage_one");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed episode record: ") + e.what());
  }
  return r;
}

// Fixed pieces shared by every step of a campaign.
struct CycleContext {
  const GridModel& grid;
  AdmittanceSet adm;
  const LstmAeModel& detector;
  Vec variance;
  NoiseModel noise;
  double bdd_tau = 0.0;  // full measurement set
  CVec base_injections;
  std::optional<Vec> robust_b;
  double robust_omega = nan_value();

  CycleContext(const GridModel& g, const LstmAeModel& det, const ScenarioConfig& cfg)
      : grid(g),
        adm(build_admittance(g)),
        detector(det),
        noise(scenario_noise(g, cfg.noise)),
        base_injections(case_injections(g)) {
    variance = noise.variance();
    bdd_tau = chi2_quantile(g.n_meas() - g.n_state(), cfg.alpha);
  }
};

// Always-on comparison setpoint, computed once at a reference state.
inline void prepare_robust_baseline(CycleContext& ctx, const StateVector& at,
                                    const ScenarioConfig& cfg) {
  if (!cfg.robust.enabled) return;
  auto balls = robust_baseline_balls(ctx.grid.n_free(), cfg.robust.delta, cfg.robust.radius);
  MtdInputs in = make_mtd_inputs(ctx.grid, at, ctx.variance, balls, cfg.alpha, cfg.rho);
  double omega = 0.0;
  ctx.robust_b = robust_baseline_setpoint(in, cfg.mtd, &omega);
  ctx.robust_omega = omega;
}

struct VerificationResult {
  double bdd_rate = 0.0;       // operator alarms with the perturbed model
  double attacker_rate = 0.0;  // attacker notices the perturbation
  int draws = 0;
};

// Re-solves the physics with b_new at the step's loading and replays the
// measurement with fresh noise. An ongoing attack is recrafted each draw
// from the attacker's own estimate with the stale model.
inline VerificationResult verify_setpoint(const CycleContext& ctx, const Vec& b_new, double factor,
                                          const StateVector& state, const AttackVector* attack,
                                          int draws, Rng& rng) {
  const GridModel g1 = apply_setpoint(ctx.grid, b_new);
  const AdmittanceSet adm1 = build_admittance(g1);
  const StateVector v1 = solve_power_flow(g1, ctx.base_injections * factor, state).state;
  const Vec clean = measurement_fn(adm1, v1);
  SeOptions opt;
  opt.throw_on_failure = false;
  VerificationResult out;
  out.draws = std::max(1, draws);
  std::normal_distribution<double> nd;
  int alarms = 0, noticed = 0;
  for (int k = 0; k < out.draws; ++k) {
    Vec z = clean;
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += ctx.noise.sigma[i] * nd(rng);
    IntegrityCheck seen = attacker_verify(ctx.grid, ctx.adm, z, ctx.variance, ctx.bdd_tau, v1);
    noticed += seen.verdict == IntegrityVerdict::mtd_detected;
    if (attack) z += craft_fdi(ctx.grid, ctx.adm, seen.estimate, *attack);
    SeResult se = wls_estimate(g1, adm1, z, ctx.variance, v1, opt);
    alarms += !se.converged || se.gamma >= ctx.bdd_tau;
  }
  out.bdd_rate = static_cast<double>(alarms) / out.draws;
  out.attacker_rate = static_cast<double>(noticed) / out.draws;
  return out;
}

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Smallest effectiveness over uniform samples of the angle ball.
inline double sampled_effectiveness(const MtdInputs& in, const Vec& b, int samples, Rng& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u;
  const Ball& ball = in.balls.at(0);
  const int n = static_cast<int>(ball.center.size());
  Mat q = effectiveness_matrix(in, b);
  double lo = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Vec d(n);
    for (int i = 0; i < n; ++i) d[i] = nd(rng);
    // Half on the sphere, half spread inside.
    const double r = s % 2 == 0 ? ball.radius : ball.radius * std::pow(u(rng), 1.0 / n);
    Vec c = ball.center + r * d.normalized();
    lo = std::min(lo, c.dot(q * c));
  }
  return lo;
}

}  // namespace detail

struct CycleOptions {
  int effectiveness_samples = 0;
};

// One test step. `prev_estimate` is the operator's estimate one step back
// and warm-starts identification.
inline EpisodeRecord run_step(const CycleContext& ctx, const Dataset& d, int t,
                              const AttackVector* attack, const StateVector& prev_estimate,
                              const ScenarioConfig& cfg, const CycleOptions& opts,
                              StateVector* estimate_out = nullptr) {
  const GridModel& g = ctx.grid;
  const int w = ctx.detector.window;
  if (t < w - 1 || t >= d.size()) throw DomainError("step has no full window");
  EpisodeRecord r;
  r.t = t;
  r.tau = ctx.detector.tau;
  Rng rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(t));
  const StateVector& truth = d.states[t];
  Mat window = d.z.middleCols(t - w + 1, w);
  if (attack) {
    r.attacked = true;
    r.attack = attack->rect();
    window.col(w - 1) += craft_fdi(g, ctx.adm, truth, *attack);
  }
  SeOptions opt;
  opt.throw_on_failure = false;
  auto t0 = std::chrono::steady_clock::now();
  SeResult se = wls_estimate(g, ctx.adm, window.col(w - 1), ctx.variance, prev_estimate, opt);
  if (estimate_out) *estimate_out = se.state;
  r.gamma_pre = se.gamma;
  r.bdd_pre = !se.converged || se.gamma >= ctx.bdd_tau;
  Detection det = detect(ctx.detector, window);
  r.score = det.score;
  r.alarm = det.alarm;
  r.ms_detect = detail::elapsed_ms(t0);

  if (ctx.robust_b && attack) {
    VerificationResult vr = verify_setpoint(ctx, *ctx.robust_b, d.factors[t], truth, attack,
                                            cfg.noise_draws, rng);
    r.robust_bdd_rate = vr.bdd_rate;
  }
  if (!r.alarm) return r;

  try {
    t0 = std::chrono::steady_clock::now();
    IdentificationResult id = identify(g, ctx.adm, ctx.detector, window, se.state, prev_estimate,
                                       cfg.identify);
    r.ms_identify = detail::elapsed_ms(t0);
    r.identified = true;
    r.c_bar = id.c_bar.rect();
    r.id_iterations = id.iterations;
    r.id_status = to_string(id.status);
    r.id_loss = id.final_loss;
    r.bypass_bdd = id.bypass_bdd;
    r.bypass_ae = id.bypass_ae;
    r.c_error = attack ? (r.c_bar - r.attack).norm() : r.c_bar.norm();

    t0 = std::chrono::steady_clock::now();
    UncertaintySet u = uncertainty_set(g, id.c_bar, se.state, cfg.radius);
    // Linearize at the identified pre-attack state.
    MtdInputs in = make_mtd_inputs(g, id.recovered, ctx.variance, {{u.angle_center, u.radius}},
                                   cfg.alpha, cfg.rho);
    MtdSetpoint sp = run_mtd(in, cfg.mtd);
    r.ms_mtd = detail::elapsed_ms(t0);
    r.mtd = true;
    r.b = sp.b;
    r.omega_star = sp.omega_star;
    r.omega_target = sp.omega_target;
    r.phi_star = sp.phi_star;
    r.lambda_c = in.lambda_c;
    r.inner_value = inner_oracle(in, sp.b).value;
    r.hidden_lambda = hiddenness_lambda(in, sp.b);
    r.ratio = reactance_perturbation_ratio(g, sp.b);
    r.best_effort = sp.best_effort;
    r.contains_zero = sp.contains_zero_attack;
    r.stage_two_ran = sp.stage_two_ran;
    r.warnings = sp.warnings;
    if (opts.effectiveness_samples > 0)
      r.min_sampled_effectiveness =
          detail::sampled_effectiveness(in, sp.b, opts.effectiveness_samples, rng);

    t0 = std::chrono::steady_clock::now();
    VerificationResult vr = verify_setpoint(ctx, sp.b, d.factors[t], truth, attack, cfg.noise_draws, rng);
    r.draws = vr.draws;
    r.bdd_post_rate = vr.bdd_rate;
    r.attacker_rate = vr.attacker_rate;
    if (cfg.compare_stage_one && sp.stage_two_ran) {
      r.hidden_lambda_stage_one = hiddenness_lambda(in, sp.stage_one_b);
      VerificationResult v1 = verify_setpoint(ctx, sp.stage_one_b, d.factors[t], truth, attack,
                                              cfg.noise_draws, rng);
      r.attacker_rate_stage_one = v1.attacker_rate;
    }
    r.ms_verify = detail::elapsed_ms(t0);
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

// Sequential cycle over [begin, end). The setpoint reverts to the base
// model after every step.
inline std::vector<EpisodeRecord> run_cycle(
    const CycleContext& ctx, const Dataset& d, int begin, int end,
    const AttackPlan& plan, const ScenarioConfig& cfg,
    const CycleOptions& opts = {}, const std::function<void(const EpisodeRecord&)>& sink = {}) {
  begin = std::max(begin, ctx.detector.window - 1);
  end = std::min(end, d.size());
  std::vector<EpisodeRecord> out;
  StateVector prev = d.states[std::max(0, begin - 1)];
  for (int t = begin; t < end; ++t) {
    const std::size_t k = static_cast<std::size_t>(t);
    const AttackVector* a = k < plan.size() && plan[k] ? &*plan[k] : nullptr;
    StateVector est;
    out.push_back(run_step(ctx, d, t, a, prev, cfg, opts, &est));
    prev = est;
    if (sink) sink(out.back());
  }
  return out;
}

}  // namespace fdimtd

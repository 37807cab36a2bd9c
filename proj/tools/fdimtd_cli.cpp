// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand takes --config, --seed and
// --out; intermediate artifacts (dataset, model, episodes) are read back
// from the output directory unless --data or --model point elsewhere.
//
// Exit codes: 0 success, 2 configuration error, 3 component failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "fdimtd/harness/metrics.hpp"

namespace fs = std::filesystem;
using namespace fdimtd;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string data;
  std::string model;

  ScenarioConfig scenario() const {
    ScenarioConfig c = config.empty() ? ScenarioConfig{} : load_config(config);
    if (seed) c.seed = c.training.seed = c.mtd.seed = *seed;
    c.validate();
    return c;
  }
  std::string data_dir() const { return data.empty() ? out : data; }
  std::string model_path() const { return model.empty() ? out + "/model.json" : model; }
  std::string path(const std::string& name) const {
    fs::create_directories(out);
    return out + "/" + name;
  }
};

void say(const std::string& s) { std::cout << s << std::endl; }

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("cannot parse " + path + ": " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

LstmAeModel load_model(const Common& c) { return model_from_json(read_json(c.model_path())); }

void save_model(const Common& c, const LstmAeModel& m) { write_json(c.model_path(), model_to_json(m)); }

// Window ending at every test step, attacked according to the campaign.
struct Scored {
  std::vector<int> t;
  std::vector<bool> attacked;
  Vec score;
};

AttackPlan campaign_plan(const GridModel& g, const Dataset& d, const ScenarioConfig& cfg,
                         bool no_attack = false) {
  CampaignConfig camp = cfg.attack;
  if (no_attack) camp.probability = 0.0;
  return plan_attacks(g, d, d.test_begin(), d.size(), camp, cfg.seed + 1);
}

Scored score_test(const GridModel& g, const Dataset& d, const LstmAeModel& m, const AttackPlan& plan) {
  const AdmittanceSet adm = build_admittance(g);
  const int w = m.window;
  Scored s;
  std::vector<double> sc;
  for (int t = std::max(d.test_begin(), w - 1); t < d.size(); ++t) {
    Mat win = d.z.middleCols(t - w + 1, w);
    if (plan[t]) win.col(w - 1) += craft_fdi(g, adm, d.states[t], *plan[t]);
    s.t.push_back(t);
    s.attacked.push_back(plan[t].has_value());
    sc.push_back(reconstruction_loss(m, win));
  }
  s.score = from_std(sc);
  return s;
}

int cmd_gen_data(const Common& c) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  Dataset d = generate_dataset(g, cfg);
  save_dataset(d, c.data_dir());
  write_json(c.path("config.json"), config_to_json(cfg));
  for (const auto& l : d.log) std::cerr << l << "\n";
  say("steps " + std::to_string(d.size()) + " (train " + std::to_string(d.n_train) + ", validation " +
      std::to_string(d.n_validation) + ", test " + std::to_string(d.n_test) + "), skipped " +
      std::to_string(d.log.size()));
  return 0;
}

int cmd_train(const Common& c) {
  ScenarioConfig cfg = c.scenario();
  Dataset d = load_dataset(c.data_dir());
  const int w = cfg.training.window;
  TrainingReport rep;
  LstmAeModel m = train(sliding_windows(d.train(), w), sliding_windows(d.validation(), w), cfg.training, &rep);
  save_model(c, m);
  write_json(c.path("training.json"), {{"train_loss", rep.train_loss},
                                       {"validation_loss", rep.validation_loss},
                                       {"best_epoch", rep.best_epoch},
                                       {"best_validation_loss", rep.best_validation_loss},
                                       {"parameters", m.parameter_count()},
                                       {"warnings", rep.warnings}});
  for (const auto& s : rep.warnings) std::cerr << "warning: " << s << "\n";
  say("best epoch " + std::to_string(rep.best_epoch) + ", validation loss " +
      std::to_string(rep.best_validation_loss));
  return 0;
}

int cmd_calibrate(const Common& c) {
  ScenarioConfig cfg = c.scenario();
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  std::vector<std::string> warnings;
  double tau = calibrate_threshold(m, sliding_windows(d.validation(), m.window), cfg.detector_fpr, &warnings);
  save_model(c, m);
  for (const auto& s : warnings) std::cerr << "warning: " << s << "\n";
  say("tau " + std::to_string(tau) + " at validation false-positive rate " + std::to_string(cfg.detector_fpr));
  return 0;
}

int cmd_detect(const Common& c, bool no_attack) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  Scored s = score_test(g, d, m, campaign_plan(g, d, cfg, no_attack));
  std::ostringstream o;
  o << std::setprecision(10) << "t,attacked,score,alarm\n";
  int alarms = 0;
  for (std::size_t k = 0; k < s.t.size(); ++k) {
    const bool a = s.score[k] >= m.tau;
    alarms += a;
    o << s.t[k] << "," << s.attacked[k] << "," << s.score[k] << "," << a << "\n";
  }
  write_text(c.path("scores.csv"), o.str());
  say("alarms " + std::to_string(alarms) + " of " + std::to_string(s.t.size()) + " windows");
  return 0;
}

int cmd_roc(const Common& c) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  Scored s = score_test(g, d, m, campaign_plan(g, d, cfg));
  auto roc = roc_curve(s.score, s.attacked);
  // Operating point of the calibrated threshold.
  std::optional<RocPoint> mark;
  if (std::isfinite(m.tau)) {
    double tp = 0, fp = 0, np = 0, nn = 0;
    for (std::size_t k = 0; k < s.t.size(); ++k) {
      const bool a = s.score[k] >= m.tau;
      (s.attacked[k] ? np : nn) += 1;
      (s.attacked[k] ? tp : fp) += a;
    }
    mark = RocPoint{m.tau, fp / nn, tp / np};
  }
  write_text(c.path("roc.csv"), roc_to_csv(roc));
  write_text(c.path("roc.svg"), roc_svg(roc, mark));
  std::ostringstream o;
  o << "AUC " << auc(roc);
  if (mark) o << ", operating point fpr " << mark->fpr << " tpr " << mark->tpr;
  say(o.str());
  return 0;
}

int cmd_identify(const Common& c, int limit) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  const AdmittanceSet adm = build_admittance(g);
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  CampaignConfig camp = cfg.attack;
  camp.probability = 1.0;
  AttackPlan plan = plan_attacks(g, d, d.test_begin(), d.size(), camp, cfg.seed + 1);
  std::ofstream jl(c.path("identify.jsonl"));
  SeOptions opt;
  opt.throw_on_failure = false;
  int n = 0, bdd = 0, ae = 0;
  std::vector<double> rel;
  for (int t = std::max(d.test_begin(), m.window); t < d.size() && n < limit; ++t) {
    Mat win = d.z.middleCols(t - m.window + 1, m.window);
    win.col(m.window - 1) += craft_fdi(g, adm, d.states[t], *plan[t]);
    StateVector prev = wls_estimate(g, adm, d.z.col(t - 1), d.variance, d.states[t - 1], opt).state;
    SeResult se = wls_estimate(g, adm, win.col(m.window - 1), d.variance, prev, opt);
    IdentificationResult id = identify(g, adm, m, win, se.state, prev, cfg.identify);
    nlohmann::json j = identification_to_json(g, id, t);
    j["truth"] = attack_to_json(g, *plan[t], t);
    const double err = (id.c_bar.rect() - plan[t]->rect()).norm() / plan[t]->rect().norm();
    j["relative_error"] = err;
    jl << j.dump() << "\n";
    ++n;
    bdd += id.bypass_bdd;
    ae += id.bypass_ae;
    rel.push_back(err);
  }
  if (n == 0) throw DomainError("no test step with a full window");
  std::ostringstream o;
  o << "identified " << n << ": bypass BDD " << static_cast<double>(bdd) / n << ", bypass detector "
    << static_cast<double>(ae) / n << ", median relative error " << empirical_quantile(rel, 0.5);
  say(o.str());
  return 0;
}

int cmd_mtd(const Common& c, int step) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  const AdmittanceSet adm = build_admittance(g);
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  if (step < 0) step = std::max(d.test_begin(), m.window);
  if (step < m.window || step >= d.size()) throw DomainError("step out of range");
  Rng rng(cfg.seed + 2);
  AttackVector a = sample_attack(g, d.states[step], cfg.attack.max_buses,
                                 {cfg.attack.band_lo, cfg.attack.band_hi}, rng);
  Mat win = d.z.middleCols(step - m.window + 1, m.window);
  win.col(m.window - 1) += craft_fdi(g, adm, d.states[step], a);
  SeOptions opt;
  opt.throw_on_failure = false;
  StateVector prev = wls_estimate(g, adm, d.z.col(step - 1), d.variance, d.states[step - 1], opt).state;
  SeResult se = wls_estimate(g, adm, win.col(m.window - 1), d.variance, prev, opt);
  IdentificationResult id = identify(g, adm, m, win, se.state, prev, cfg.identify);
  UncertaintySet u = uncertainty_set(g, id.c_bar, se.state, cfg.radius);
  MtdInputs in = make_mtd_inputs(g, id.recovered, d.variance, {{u.angle_center, u.radius}}, cfg.alpha, cfg.rho);
  MtdSetpoint sp = run_mtd(in, cfg.mtd);
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : sp.trace) trace.push_back(trace_to_json(e));
  write_json(c.path("mtd.json"), {{"step", step},
                                  {"attack", attack_to_json(g, a, step)},
                                  {"b", to_std(sp.b)},
                                  {"omega_star", sp.omega_star},
                                  {"omega_target", sp.omega_target},
                                  {"phi_star", std::isfinite(sp.phi_star) ? nlohmann::json(sp.phi_star) : nlohmann::json()},
                                  {"lambda_c", in.lambda_c},
                                  {"best_effort", sp.best_effort},
                                  {"ratio", reactance_perturbation_ratio(g, sp.b)},
                                  {"warnings", sp.warnings},
                                  {"trace", trace}});
  for (const auto& w : sp.warnings) std::cerr << "warning: " << w << "\n";
  std::ostringstream o;
  o << "omega* " << sp.omega_star << " (threshold " << in.lambda_c << "), hiddenness "
    << hiddenness_lambda(in, sp.b) << ", perturbation ratio " << reactance_perturbation_ratio(g, sp.b);
  say(o.str());
  return 0;
}

int cmd_run_cycle(const Common& c, bool no_attack, int limit, int samples) {
  ScenarioConfig cfg = c.scenario();
  GridModel g = load_case(cfg.case_path);
  Dataset d = load_dataset(c.data_dir());
  LstmAeModel m = load_model(c);
  if (!std::isfinite(m.tau)) throw ModelError("detector threshold is not calibrated");
  CycleContext ctx(g, m, cfg);
  prepare_robust_baseline(ctx, solve_power_flow(g).state, cfg);
  if (ctx.robust_b)
    write_json(c.path("robust.json"), {{"b", to_std(*ctx.robust_b)},
                                       {"omega", ctx.robust_omega},
                                       {"ratio", reactance_perturbation_ratio(g, *ctx.robust_b)}});
  AttackPlan plan = campaign_plan(g, d, cfg, no_attack);
  const int begin = d.test_begin();
  const int end = limit > 0 ? std::min(d.size(), begin + limit) : d.size();
  std::ofstream jl(c.path("episodes.jsonl"));
  int done = 0;
  CycleOptions opts;
  opts.effectiveness_samples = samples;
  auto recs = run_cycle(ctx, d, begin, end, plan, cfg, opts, [&](const EpisodeRecord& r) {
    jl << episode_to_json(r).dump() << "\n" << std::flush;
    if (!r.error.empty()) std::cerr << "step " << r.t << ": " << r.error << "\n";
    if (++done % 50 == 0) std::cerr << done << " steps\n";
  });
  MetricsReport rep = evaluate(recs, ctx.robust_b ? std::optional<double>(reactance_perturbation_ratio(g, *ctx.robust_b))
                                                  : std::nullopt);
  say("steps " + std::to_string(recs.size()) + ", triggers " + std::to_string(rep.triggers) + ", errors " +
      std::to_string(rep.errors));
  return 0;
}

std::optional<double> robust_ratio_from(const Common& c) {
  const std::string p = c.out + "/robust.json";
  if (!fs::exists(p)) return std::nullopt;
  return read_json(p).at("ratio").get<double>();
}

int cmd_evaluate(const Common& c, const std::string& episodes) {
  auto recs = read_episodes(episodes.empty() ? c.out + "/episodes.jsonl" : episodes);
  MetricsReport m = evaluate(recs, robust_ratio_from(c));
  write_json(c.path("metrics.json"), metrics_to_json(m));
  write_text(c.path("metrics.csv"), metrics_to_csv(m));
  std::cout << metrics_to_csv(m);
  return 0;
}

int cmd_report(const Common& c) {
  nlohmann::json m = read_json(c.out + "/metrics.json");
  std::vector<std::pair<std::string, double>> bars;
  for (const char* k : {"detector_tpr", "detector_fpr", "adp", "dhp", "end_to_end_fpr", "mean_ratio"})
    if (m.contains(k) && m[k]["value"].is_number()) bars.emplace_back(k, m[k]["value"].get<double>());
  if (m.contains("robust_ratio") && m["robust_ratio"].is_number())
    bars.emplace_back("robust_ratio", m["robust_ratio"].get<double>());
  write_text(c.path("metrics.svg"), bars_svg(bars));
  std::ostringstream md;
  md << "# Run report\n\n| metric | value |\n|---|---|\n";
  for (const auto& [k, v] : bars) md << "| " << k << " | " << v << " |\n";
  md << "\nwindows " << m.value("windows", 0) << ", attacks " << m.value("attacks", 0) << ", triggers "
     << m.value("triggers", 0) << ", errors " << m.value("errors", 0) << "\n";
  write_text(c.path("report.md"), md.str());
  say("wrote " + c.out + "/metrics.svg and " + c.out + "/report.md");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detector-triggered moving target defense for power-system state estimation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", common.config, "Scenario file (TOML, or JSON by extension)");
    s->add_option("--seed", common.seed, "Override the scenario seed");
    s->add_option("--out", common.out, "Output directory")->capture_default_str();
    s->add_option("--data", common.data, "Dataset directory (default: --out)");
    s->add_option("--model", common.model, "Detector model file (default: <out>/model.json)");
  };
  bool no_attack = false;
  int limit = 0, samples = 0, step = -1, id_limit = 50;
  std::string episodes;

  auto* gen = app.add_subcommand("gen-data", "Generate the measurement series");
  auto* tr = app.add_subcommand("train", "Train the detector on the training split");
  auto* cal = app.add_subcommand("calibrate", "Set the detector threshold on the validation split");
  auto* det = app.add_subcommand("detect", "Score every test window");
  det->add_flag("--no-attack", no_attack, "Score clean windows only");
  auto* idf = app.add_subcommand("identify", "Identify attacks on test windows");
  idf->add_option("--limit", id_limit, "Number of windows")->capture_default_str();
  auto* mtd = app.add_subcommand("mtd", "Design a perturbation for one attacked step");
  mtd->add_option("--step", step, "Step index (default: first test step)");
  auto* cyc = app.add_subcommand("run-cycle", "Run the triggered defense over the test split");
  cyc->add_flag("--no-attack", no_attack, "Run without attacks");
  cyc->add_option("--limit", limit, "Stop after this many steps (0: all)");
  cyc->add_option("--samples", samples, "Sampled attacks per trigger for the effectiveness check");
  auto* ev = app.add_subcommand("evaluate", "Compute metrics from an episode log");
  ev->add_option("--episodes", episodes, "Episode log (default: <out>/episodes.jsonl)");
  auto* roc = app.add_subcommand("roc", "Detector ROC on the test campaign");
  auto* rep = app.add_subcommand("report", "Plot the metric bars");
  for (auto* s : {gen, tr, cal, det, idf, mtd, cyc, ev, roc, rep}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common);
    if (cal->parsed()) return cmd_calibrate(common);
    if (det->parsed()) return cmd_detect(common, no_attack);
    if (idf->parsed()) return cmd_identify(common, id_limit);
    if (mtd->parsed()) return cmd_mtd(common, step);
    if (cyc->parsed()) return cmd_run_cycle(common, no_attack, limit, samples);
    if (ev->parsed()) return cmd_evaluate(common, episodes);
    if (roc->parsed()) return cmd_roc(common);
    if (rep->parsed()) return cmd_report(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 3;
}

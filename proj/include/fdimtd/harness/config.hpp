// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// Scenario configuration, read from TOML or JSON with the same layout.

#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>
#include <toml.hpp>

#include "fdimtd/detector/lstm_ae.hpp"
#include "fdimtd/grid/case_io.hpp"
#include "fdimtd/identifier/identify.hpp"
#include "fdimtd/mtd/mtd.hpp"

namespace fdimtd {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ProfileConfig {
  int steps = 2000;
  int steps_per_day = 288;  // 5-minute resolution
  double daily_amplitude = 0.15;
  double weekly_amplitude = 0.05;
  double jitter = 0.01;
  double phase = 0.0;
  std::string path;  // optional CSV of load factors, one per line
};

struct CampaignConfig {
  int min_buses = 1;
  int max_buses = 3;
  double band_lo = 0.1;
  double band_hi = 0.3;
  double probability = 0.5;  // share of test steps under attack
};

struct RobustConfig {
  bool enabled = true;
  double delta = 0.05;
  double radius = 0.01;
};

struct ScenarioConfig {
  std::string case_path = bundled_case14_path();
  std::uint64_t seed = 7;
  double noise = 0.02;
  double alpha = 0.02;
  double rho = 0.98;
  double radius = 0.01;
  double detector_fpr = 0.08;
  int noise_draws = 0;  // Monte-Carlo draws per MTD verification, 0 for one
  bool compare_stage_one = false;
  ProfileConfig profile;
  TrainingConfig training;
  CampaignConfig attack;
  IdentifyConfig identify;
  MtdConfig mtd;
  RobustConfig robust;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!std::filesystem::exists(case_path)) fail("case file not found: " + case_path);
    if (!profile.path.empty() && !std::filesystem::exists(profile.path))
      fail("profile file not found: " + profile.path);
    if (!(noise >= 0.0)) fail("noise must be nonnegative");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (!(rho > 0.0 && rho < 1.0)) fail("rho must lie in (0, 1)");
    if (!(radius > 0.0)) fail("radius must be positive");
    if (!(detector_fpr > 0.0 && detector_fpr < 1.0)) fail("detector_fpr must lie in (0, 1)");
    if (noise_draws < 0) fail("noise_draws must be nonnegative");
    if (profile.steps < 1 || profile.steps_per_day < 1) fail("profile lengths must be positive");
    if (profile.jitter < 0.0) fail("profile jitter must be nonnegative");
    if (attack.min_buses < 0 || attack.max_buses < attack.min_buses)
      fail("attack bus range must satisfy 0 <= min <= max");
    if (!(attack.band_lo >= 0.0 && attack.band_hi >= attack.band_lo))
      fail("attack band must satisfy 0 <= lo <= hi");
    if (!(attack.probability >= 0.0 && attack.probability <= 1.0))
      fail("attack probability must lie in [0, 1]");
    if (!(robust.delta > 0.0 && robust.radius > 0.0)) fail("robust ball must be positive");
    try {
      training.validate();
      mtd.validate();
      identify.validate();
    } catch (const Error& e) {
      fail(e.what());
    }
  }
};

namespace detail {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(std::string("'") + key + "' must be a table");
  return j.at(key);
}

}  // namespace detail

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a table");
  using detail::read;
  ScenarioConfig c;
  read(j, "case", c.case_path);
  read(j, "seed", c.seed);
  read(j, "noise", c.noise);
  read(j, "alpha", c.alpha);
  read(j, "rho", c.rho);
  read(j, "radius", c.radius);
  read(j, "detector_fpr", c.detector_fpr);
  read(j, "noise_draws", c.noise_draws);
  read(j, "compare_stage_one", c.compare_stage_one);

  const auto& p = detail::section(j, "profile");
  read(p, "steps", c.profile.steps);
  read(p, "steps_per_day", c.profile.steps_per_day);
  read(p, "daily_amplitude", c.profile.daily_amplitude);
  read(p, "weekly_amplitude", c.profile.weekly_amplitude);
  read(p, "jitter", c.profile.jitter);
  read(p, "phase", c.profile.phase);
  read(p, "path", c.profile.path);

  const auto& s = detail::section(j, "split");
  read(s, "train", c.training.train_fraction);
  read(s, "validation", c.training.validation_fraction);
  read(s, "test", c.training.test_fraction);

  const auto& d = detail::section(j, "detector");
  read(d, "window", c.training.window);
  read(d, "encoder_widths", c.training.encoder_widths);
  read(d, "epochs", c.training.epochs);
  read(d, "batch_size", c.training.batch_size);
  read(d, "lr", c.training.lr);
  read(d, "patience", c.training.patience);
  read(d, "min_delta", c.training.min_delta);

  const auto& a = detail::section(j, "attack");
  read(a, "min_buses", c.attack.min_buses);
  read(a, "max_buses", c.attack.max_buses);
  if (a.contains("band")) {
    std::vector<double> band;
    read(a, "band", band);
    if (band.size() != 2) throw ConfigError("attack.band must have two entries");
    c.attack.band_lo = band[0];
    c.attack.band_hi = band[1];
  }
  read(a, "probability", c.attack.probability);

  const auto& i = detail::section(j, "identify");
  read(i, "lr", c.identify.lr);
  read(i, "beta_r", c.identify.beta_r);
  read(i, "beta_i", c.identify.beta_i);
  read(i, "ite_min", c.identify.ite_min);
  read(i, "ite_max", c.identify.ite_max);

  const auto& m = detail::section(j, "mtd");
  read(m, "runs", c.mtd.runs);
  read(m, "ite_one", c.mtd.ite_one);
  read(m, "tol_one", c.mtd.tol_one);
  read(m, "ite_two", c.mtd.ite_two);
  read(m, "tol_two", c.mtd.tol_two);

  const auto& r = detail::section(j, "robust");
  read(r, "enabled", c.robust.enabled);
  read(r, "delta", c.robust.delta);
  read(r, "radius", c.robust.radius);

  c.training.seed = c.seed;
  c.mtd.seed = c.seed;
  return c;
}

inline nlohmann::json config_to_json(const ScenarioConfig& c) {
  return {{"case", c.case_path},
          {"seed", c.seed},
          {"noise", c.noise},
          {"alpha", c.alpha},
          {"rho", c.rho},
          {"radius", c.radius},
          {"detector_fpr", c.detector_fpr},
          {"noise_draws", c.noise_draws},
          {"compare_stage_one", c.compare_stage_one},
          {"profile",
           {{"steps", c.profile.steps},
            {"steps_per_day", c.profile.steps_per_day},
            {"daily_amplitude", c.profile.daily_amplitude},
            {"weekly_amplitude", c.profile.weekly_amplitude},
            {"jitter", c.profile.jitter},
            {"phase", c.profile.phase},
            {"path", c.profile.path}}},
          {"split",
           {{"train", c.training.train_fraction},
            {"validation", c.training.validation_fraction},
            {"test", c.training.test_fraction}}},
          {"detector",
           {{"window", c.training.window},
            {"encoder_widths", c.training.encoder_widths},
            {"epochs", c.training.epochs},
            {"batch_size", c.training.batch_size},
            {"lr", c.training.lr},
            {"patience", c.training.patience},
            {"min_delta", c.training.min_delta}}},
          {"attack",
           {{"min_buses", c.attack.min_buses},
            {"max_buses", c.attack.max_buses},
            {"band", {c.attack.band_lo, c.attack.band_hi}},
            {"probability", c.attack.probability}}},
          {"identify",
           {{"lr", c.identify.lr},
            {"beta_r", c.identify.beta_r},
            {"beta_i", c.identify.beta_i},
            {"ite_min", c.identify.ite_min},
            {"ite_max", c.identify.ite_max}}},
          {"mtd",
           {{"runs", c.mtd.runs},
            {"ite_one", c.mtd.ite_one},
            {"tol_one", c.mtd.tol_one},
            {"ite_two", c.mtd.ite_two},
            {"tol_two", c.mtd.tol_two}}},
          {"robust",
           {{"enabled", c.robust.enabled}, {"delta", c.robust.delta}, {"radius", c.robust.radius}}}};
}

inline nlohmann::json toml_to_json(const std::string& text) {
  toml::table tbl;
  try {
    tbl = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("TOML parse error: ") + e.what());
  }
  std::ostringstream o;
  o << toml::json_formatter{tbl};
  return nlohmann::json::parse(o.str());
}

// TOML unless the extension is .json. Relative case and profile paths
// resolve against the config file's directory.
inline ScenarioConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  if (std::filesystem::path(path).extension() == ".json") {
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("JSON parse error: ") + e.what());
    }
  } else {
    j = toml_to_json(text);
  }
  ScenarioConfig c = config_from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  if (j.contains("case")) resolve(c.case_path);
  resolve(c.profile.path);
  c.validate();
  return c;
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic load profiles and the measurement series built from them.

#pragma once

#include <fstream>
#include <numbers>

#include "fdimtd/grid.hpp"
#include "fdimtd/harness/config.hpp"

namespace fdimtd {

// Daily sinusoid with weekly modulation and Gaussian jitter.
inline Vec synthetic_profile(const ProfileConfig& p, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec f(p.steps);
  const double day = p.steps_per_day, week = 7.0 * p.steps_per_day;
  for (int t = 0; t < p.steps; ++t) {
    const double tt = static_cast<double>(t);
    f[t] = 1.0 + p.daily_amplitude * std::sin(2.0 * std::numbers::pi * tt / day + p.phase) +
           p.weekly_amplitude * std::sin(2.0 * std::numbers::pi * tt / week) +
           p.jitter * nd(rng);
  }
  return f;
}

inline Vec read_profile_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      v.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw ConfigError("bad load factor in " + path + ": " + line);
    }
  }
  if (v.empty()) throw ConfigError("empty load profile " + path);
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct Dataset {
  Mat z;                            // P x T noisy measurements
  std::vector<StateVector> states;  // true operating points
  Vec factors;                      // load factor per kept step
  std::vector<int> steps;           // profile index of each kept step
  Vec variance;                     // fixed diagonal of R
  std::vector<std::string> log;     // skipped steps
  int n_train = 0, n_validation = 0, n_test = 0;

  int size() const { return static_cast<int>(z.cols()); }
  int test_begin() const { return n_train + n_validation; }
  Mat train() const { return z.leftCols(n_train); }
  Mat validation() const { return z.middleCols(n_train, n_validation); }
  Mat test() const { return z.rightCols(n_test); }
};

inline void assign_splits(Dataset& d, const TrainingConfig& t) {
  const int n = d.size();
  d.n_train = static_cast<int>(std::floor(t.train_fraction * n));
  d.n_validation = static_cast<int>(std::floor(t.validation_fraction * n));
  d.n_test = n - d.n_train - d.n_validation;
}

// Noise covariance pinned to the nominal operating point so R is the same
// at every step.
inline NoiseModel scenario_noise(const GridModel& g, double scale) {
  return NoiseModel::from_reference(measurement_fn(g, solve_power_flow(g).state), scale);
}

// Contiguous 60/20/20 split in time order. Power-flow failures drop the
// step and leave a log line.
inline Dataset generate_dataset(const GridModel& g, const ScenarioConfig& cfg) {
  Rng rng(cfg.seed);
  Vec profile = cfg.profile.path.empty() ? synthetic_profile(cfg.profile, rng)
                                         : read_profile_csv(cfg.profile.path);
  const AdmittanceSet adm = build_admittance(g);
  const CVec base = case_injections(g);
  NoiseModel noise = scenario_noise(g, cfg.noise);
  Dataset d;
  d.variance = noise.variance();
  StateVector prev = solve_power_flow(g).state;
  std::vector<Vec> cols;
  std::vector<double> kept;
  for (Eigen::Index t = 0; t < profile.size(); ++t) {
    try {
      PowerFlowResult pf = solve_power_flow(g, base * profile[t], prev);
      prev = pf.state;
    } catch (const Error& e) {
      d.log.push_back("step " + std::to_string(t) + " skipped: " + e.what());
      continue;
    }
    d.states.push_back(prev);
    cols.push_back(measure(g, adm, prev, noise, rng).z);
    kept.push_back(profile[t]);
    d.steps.push_back(static_cast<int>(t));
  }
  if (cols.empty()) throw Error("no step of the profile produced a power-flow solution");
  d.z.resize(g.n_meas(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) d.z.col(static_cast<Eigen::Index>(k)) = cols[k];
  d.factors = Eigen::Map<Vec>(kept.data(), static_cast<Eigen::Index>(kept.size()));
  assign_splits(d, cfg.training);
  return d;
}

// Persistence: measurements.csv (one row per step), states.csv (vm and va
// per bus), dataset.json (variance, factors, split sizes).
inline void write_matrix_csv(const std::string& path, const Mat& rows_by_cols) {
  std::ofstream o(path);
  if (!o) throw Error("cannot write " + path);
  o << std::setprecision(17);
  for (Eigen::Index r = 0; r < rows_by_cols.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows_by_cols.cols(); ++c) o << (c ? "," : "") << rows_by_cols(r, c);
    o << "\n";
  }
}

inline Mat read_matrix_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        r.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ModelError("bad number in " + path);
      }
    }
    if (!rows.empty() && r.size() != rows[0].size()) throw ModelError("ragged rows in " + path);
    rows.push_back(std::move(r));
  }
  Mat m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline void save_dataset(const Dataset& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir + "/measurements.csv", d.z.transpose());
  const int nb = d.states.empty() ? 0 : d.states[0].size();
  Mat s(d.size(), 2 * nb);
  for (int t = 0; t < d.size(); ++t) s.row(t) << d.states[t].vm().transpose(), d.states[t].va().transpose();
  write_matrix_csv(dir + "/states.csv", s);
  nlohmann::json meta = {{"variance", std::vector<double>(d.variance.begin(), d.variance.end())},
                         {"factors", std::vector<double>(d.factors.begin(), d.factors.end())},
                         {"steps", d.steps},
                         {"n_train", d.n_train},
                         {"n_validation", d.n_validation},
                         {"n_test", d.n_test},
                         {"log", d.log}};
  std::ofstream(dir + "/dataset.json") << meta.dump(1) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset d;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir + "/dataset.json"));
    auto v = meta.at("variance").get<std::vector<double>>();
    d.variance = Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    auto f = meta.at("factors").get<std::vector<double>>();
    d.factors = Eigen::Map<Vec>(f.data(), static_cast<Eigen::Index>(f.size()));
    d.steps = meta.at("steps").get<std::vector<int>>();
    d.n_train = meta.at("n_train").get<int>();
    d.n_validation = meta.at("n_validation").get<int>();
    d.n_test = meta.at("n_test").get<int>();
    d.log = meta.value("log", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed dataset.json: ") + e.what());
  }
  d.z = read_matrix_csv(dir + "/measurements.csv").transpose();
  Mat s = read_matrix_csv(dir + "/states.csv");
  if (s.rows() != d.z.cols() || s.cols() % 2 || d.z.rows() != d.variance.size() ||
      d.n_train + d.n_validation + d.n_test != d.size())
    throw ModelError("dataset files disagree in size");
  const Eigen::Index nb = s.cols() / 2;
  for (Eigen::Index t = 0; t < s.rows(); ++t)
    d.states.push_back(StateVector::from_polar(s.row(t).head(nb).transpose(), s.row(t).tail(nb).transpose()));
  return d;
}

}  // namespace fdimtd

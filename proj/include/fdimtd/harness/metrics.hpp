// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <fstream>
#include <optional>

#include "fdimtd/harness/cycle.hpp"

namespace fdimtd {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

// Alarm when score >= threshold. Points run from (0, 0) to (1, 1) with
// one step per distinct score.
inline std::vector<RocPoint> roc_curve(const Vec& scores, const std::vector<bool>& positive) {
  require_dims(static_cast<std::size_t>(scores.size()) == positive.size(), "scores and labels disagree");
  const double np = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double nn = static_cast<double>(positive.size()) - np;
  if (np == 0 || nn == 0) throw DomainError("ROC needs both classes");
  std::vector<int> idx(positive.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (positive[idx[k]] ? tp : fp) += 1.0;
    if (k + 1 < idx.size() && scores[idx[k + 1]] == scores[idx[k]]) continue;
    out.push_back({scores[idx[k]], fp / nn, tp / np});
  }
  return out;
}

inline double auc(const std::vector<RocPoint>& roc) {
  double a = 0.0;
  for (std::size_t k = 1; k < roc.size(); ++k)
    a += (roc[k].fpr - roc[k - 1].fpr) * 0.5 * (roc[k].tpr + roc[k - 1].tpr);
  return a;
}

// Rates with their denominators; nullopt when the denominator is zero.
struct Rate {
  std::optional<double> value;
  double numerator = 0.0;
  int denominator = 0;
};

inline Rate make_rate(double num, int den) {
  Rate r;
  r.numerator = num;
  r.denominator = den;
  if (den > 0) r.value = num / den;
  return r;
}

struct MetricsReport {
  int windows = 0;
  int attacks = 0;
  int triggers = 0;
  Rate detector_tpr;        // alarms among attacked windows
  Rate detector_fpr;        // alarms among normal windows
  Rate adp;                 // attacks caught after the perturbation
  Rate dhp;                 // triggers the attacker did not notice
  Rate end_to_end_fpr;      // normal windows that end in a confirmed alarm
  Rate false_alarm_passthrough;  // post-MTD alarms among detector false alarms
  Rate trigger_rate;
  Rate mean_ratio;          // per trigger
  std::optional<double> robust_ratio;
  Rate robust_adp;
  int errors = 0;
};

// Monte-Carlo rates fall back to single draws transparently because a
// single draw is stored as a 0/1 rate.
inline MetricsReport evaluate(const std::vector<EpisodeRecord>& records,
                              std::optional<double> robust_ratio = std::nullopt) {
  if (records.empty()) throw DomainError("no episode records");
  MetricsReport m;
  m.windows = static_cast<int>(records.size());
  double tp = 0, fp = 0, caught = 0, unnoticed = 0, confirmed_false = 0, ratio = 0, robust = 0;
  int normals = 0, false_alarms = 0, verified = 0, robust_n = 0;
  for (const auto& r : records) {
    if (!r.error.empty()) ++m.errors;
    if (r.attacked) {
      ++m.attacks;
      tp += r.alarm;
      if (r.alarm && r.mtd && std::isfinite(r.bdd_post_rate)) caught += r.bdd_post_rate;
      if (std::isfinite(r.robust_bdd_rate)) {
        robust += r.robust_bdd_rate;
        ++robust_n;
      }
    } else {
      ++normals;
      fp += r.alarm;
      if (r.alarm) ++false_alarms;
      if (r.alarm && r.mtd && std::isfinite(r.bdd_post_rate)) confirmed_false += r.bdd_post_rate;
    }
    if (r.alarm) ++m.triggers;
    if (r.mtd && std::isfinite(r.attacker_rate)) {
      ++verified;
      unnoticed += 1.0 - r.attacker_rate;
      ratio += r.ratio;
    }
  }
  m.detector_tpr = make_rate(tp, m.attacks);
  m.detector_fpr = make_rate(fp, normals);
  m.adp = make_rate(caught, m.attacks);
  m.dhp = make_rate(unnoticed, verified);
  m.end_to_end_fpr = make_rate(confirmed_false, normals);
  m.false_alarm_passthrough = make_rate(confirmed_false, false_alarms);
  m.trigger_rate = make_rate(m.triggers, m.windows);
  m.mean_ratio = make_rate(ratio, verified);
  m.robust_ratio = robust_ratio;
  m.robust_adp = make_rate(robust, robust_n);
  return m;
}

inline nlohmann::json rate_json(const Rate& r) {
  return {{"value", r.value ? nlohmann::json(*r.value) : nlohmann::json()},
          {"numerator", r.numerator},
          {"denominator", r.denominator}};
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  return {{"windows", m.windows},
          {"attacks", m.attacks},
          {"triggers", m.triggers},
          {"errors", m.errors},
          {"detector_tpr", rate_json(m.detector_tpr)},
          {"detector_fpr", rate_json(m.detector_fpr)},
          {"adp", rate_json(m.adp)},
          {"dhp", rate_json(m.dhp)},
          {"end_to_end_fpr", rate_json(m.end_to_end_fpr)},
          {"false_alarm_passthrough", rate_json(m.false_alarm_passthrough)},
          {"trigger_rate", rate_json(m.trigger_rate)},
          {"mean_ratio", rate_json(m.mean_ratio)},
          {"robust_ratio", m.robust_ratio ? nlohmann::json(*m.robust_ratio) : nlohmann::json()},
          {"robust_adp", rate_json(m.robust_adp)}};
}

// name,value,numerator,denominator; undefined values are left empty.
inline std::string metrics_to_csv(const MetricsReport& m) {
  std::ostringstream o;
  o << std::setprecision(10) << "metric,value,numerator,denominator\n";
  auto row = [&](const char* n, const Rate& r) {
    o << n << ",";
    if (r.value) o << *r.value;
    o << "," << r.numerator << "," << r.denominator << "\n";
  };
  row("detector_tpr", m.detector_tpr);
  row("detector_fpr", m.detector_fpr);
  row("adp", m.adp);
  row("dhp", m.dhp);
  row("end_to_end_fpr", m.end_to_end_fpr);
  row("false_alarm_passthrough", m.false_alarm_passthrough);
  row("trigger_rate", m.trigger_rate);
  row("mean_ratio", m.mean_ratio);
  o << "robust_ratio,";
  if (m.robust_ratio) o << *m.robust_ratio;
  o << ",,\n";
  row("robust_adp", m.robust_adp);
  return o.str();
}

inline std::string roc_to_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream o;
  o << std::setprecision(10) << "threshold,fpr,tpr\n";
  for (const auto& p : roc) o << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
  return o.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream o(path);
  if (!o) throw Error("cannot write " + path);
  o << text;
}

inline void write_episodes(const std::string& path, const std::vector<EpisodeRecord>& rs) {
  std::ofstream o(path);
  if (!o) throw Error("cannot write " + path);
  for (const auto& r : rs) o << episode_to_json(r).dump() << "\n";
}

inline std::vector<EpisodeRecord> read_episodes(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<EpisodeRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ModelError(std::string("bad JSONL line: ") + e.what());
    }
  }
  return out;
}

// Plain SVG, no dependencies. The operating point is marked in red.
inline std::string roc_svg(const std::vector<RocPoint>& roc, std::optional<RocPoint> mark = {}) {
  const double w = 400, h = 400, pad = 40;
  auto px = [&](double f) { return pad + f * (w - 2 * pad); };
  auto py = [&](double t) { return h - pad - t * (h - 2 * pad); };
  std::ostringstream o;
  o << std::setprecision(5);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
    << "\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n";
  o << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad << "\" height=\""
    << h - 2 * pad << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : roc) o << px(p.fpr) << "," << py(p.tpr) << " ";
  o << "\"/>\n";
  if (mark)
    o << "<circle cx=\"" << px(mark->fpr) << "\" cy=\"" << py(mark->tpr) << "\" r=\"5\" fill=\"red\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">false positive rate</text>\n";
  o << "<text x=\"12\" y=\"" << h / 2 << "\" transform=\"rotate(-90 12 " << h / 2
    << ")\" text-anchor=\"middle\">true positive rate</text>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\">AUC " << auc(roc) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

inline std::string bars_svg(const std::vector<std::pair<std::string, double>>& bars) {
  const double w = 80.0 * std::max<std::size_t>(bars.size(), 1) + 80, h = 320, pad = 40;
  std::ostringstream o;
  o << std::setprecision(4);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  double top = 1.0;
  for (const auto& b : bars) top = std::max(top, b.second);
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const double x = pad + 80.0 * k + 10, bh = (h - 2 * pad) * bars[k].second / top;
    o << "<rect x=\"" << x << "\" y=\"" << h - pad - bh << "\" width=\"60\" height=\"" << bh
      << "\" fill=\"#2ca02c\"/>\n";
    o << "<text x=\"" << x + 30 << "\" y=\"" << h - pad + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << bars[k].first << "</text>\n";
    o << "<text x=\"" << x + 30 << "\" y=\"" << h - pad - bh - 4 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << bars[k].second << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace fdimtd

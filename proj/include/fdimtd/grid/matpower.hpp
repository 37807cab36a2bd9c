// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdimtd/core.hpp"

namespace fdimtd {

namespace detail {

inline std::vector<std::vector<double>> matpower_matrix(const std::string& text,
                                                        const std::string& name) {
  std::string key = "mpc." + name;
  auto pos = text.find(key);
  while (pos != std::string::npos) {
    auto eq = text.find_first_not_of(" \t", pos + key.size());
    if (eq != std::string::npos && text[eq] == '=') break;
    pos = text.find(key, pos + key.size());
  }
  if (pos == std::string::npos) throw ModelError("matpower text lacks " + key);
  auto open = text.find('[', pos);
  auto close = text.find(']', open);
  if (open == std::string::npos || close == std::string::npos)
    throw ModelError("unterminated matrix " + key);
  std::string body = text.substr(open + 1, close - open - 1);
  std::vector<std::vector<double>> rows;
  std::istringstream lines(body);
  std::string line;
  while (std::getline(lines, line)) {
    if (auto c = line.find('%'); c != std::string::npos) line.resize(c);
    std::istringstream parts(line);
    std::string piece;
    while (std::getline(parts, piece, ';')) {
      std::istringstream nums(piece);
      std::vector<double> row;
      double x;
      while (nums >> x) row.push_back(x);
      if (!row.empty()) rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline double matpower_scalar(const std::string& text, const std::string& name) {
  std::regex re("mpc\\." + name + "\\s*=\\s*([-+0-9.eE]+)");
  std::smatch m;
  if (!std::regex_search(text, m, re)) throw ModelError("missing mpc." + name);
  return std::stod(m[1].str());
}

}  // namespace detail

// Convert MATPOWER case text into the JSON case document. Shunts and line
// charging are dropped; a zero ratio means a plain line (tap 1).
inline nlohmann::json matpower_to_case(const std::string& text,
                                       bool dfacts_all = true,
                                       double eta = 0.5) {
  double base = detail::matpower_scalar(text, "baseMVA");
  auto bus = detail::matpower_matrix(text, "bus");
  auto gen = detail::matpower_matrix(text, "gen");
  auto branch = detail::matpower_matrix(text, "branch");

  std::map<int, double> pg, qg, vg;
  for (const auto& r : gen) {
    if (r.size() < 8) throw ModelError("short gen row");
    if (r[7] <= 0.0) continue;
    int b = static_cast<int>(r[0]);
    pg[b] += r[1];
    qg[b] += r[2];
    vg[b] = r[5];
  }
  nlohmann::json doc;
  doc["version"] = 1;
  doc["baseMVA"] = base;
  doc["buses"] = nlohmann::json::array();
  for (const auto& r : bus) {
    if (r.size() < 10) throw ModelError("short bus row");
    int id = static_cast<int>(r[0]);
    int type = static_cast<int>(r[1]);
    std::string t = type == 3 ? "ref" : type == 2 ? "pv" : "pq";
    double vm = vg.count(id) && type != 1 ? vg[id] : r[7];
    doc["buses"].push_back({{"id", id},
                            {"type", t},
                            {"vm", vm},
                            {"va", r[8]},
                            {"pd", r[2] - pg[id]},
                            {"qd", r[3] - qg[id]},
                            {"baseKV", r[9]}});
  }
  doc["branches"] = nlohmann::json::array();
  int k = 0;
  for (const auto& r : branch) {
    if (r.size() < 11) throw ModelError("short branch row");
    ++k;
    if (r[10] <= 0.0) continue;
    double tap = r[8] == 0.0 ? 1.0 : r[8];
    doc["branches"].push_back({{"id", k},
                               {"from", static_cast<int>(r[0])},
                               {"to", static_cast<int>(r[1])},
                               {"r", r[2]},
                               {"x", r[3]},
                               {"tap", tap},
                               {"dfacts", dfacts_all},
                               {"eta", eta}});
  }
  return doc;
}

}  // namespace fdimtd

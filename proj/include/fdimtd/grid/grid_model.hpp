// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdimtd/core.hpp"

namespace fdimtd {

enum class BusType { ref, pv, pq };

inline std::string to_string(BusType t) {
  switch (t) {
    case BusType::ref: return "ref";
    case BusType::pv: return "pv";
    default: return "pq";
  }
}

inline BusType bus_type_from_string(const std::string& s) {
  if (s == "ref" || s == "slack") return BusType::ref;
  if (s == "pv") return BusType::pv;
  if (s == "pq") return BusType::pq;
  throw ModelError("unknown bus type '" + s + "'");
}

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double base_kv = 0.0;
  double vm = 1.0;  // p.u.; voltage setpoint for ref and pv buses
  double va = 0.0;  // radians
  double pd = 0.0;  // net demand, p.u. (generation enters negative)
  double qd = 0.0;
  bool operator==(const Bus&) const = default;
};

struct Branch {
  int id = 0;
  int from = 0;  // bus index, not id
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double g = 0.0;
  double b = 0.0;
  double tap = 1.0;
  bool dfacts = false;
  double eta = 0.0;
  double b_min = 0.0;
  double b_max = 0.0;
  bool operator==(const Branch&) const = default;
};

// Raised by apply_setpoint when a target susceptance leaves its box.
class BoundsViolation : public Error {
 public:
  BoundsViolation(const std::string& what, std::vector<int> branch_ids)
      : Error(what), branch_ids_(std::move(branch_ids)) {}
  const std::vector<int>& branch_ids() const { return branch_ids_; }

 private:
  std::vector<int> branch_ids_;
};

// Susceptance range reachable by moving the reactance within
// [(1-eta) x0, (1+eta) x0] while the resistance stays put.
// b(x) = -x / (r^2 + x^2) has its only stationary point (a minimum) at x = r.
inline std::pair<double, double> susceptance_bounds(double r, double x0,
                                                    double eta) {
  auto b_of = [r](double x) { return -x / (r * r + x * x); };
  double lo_x = (1.0 - eta) * x0;
  double hi_x = (1.0 + eta) * x0;
  if (lo_x > hi_x) std::swap(lo_x, hi_x);
  if (lo_x <= 0.0) throw ModelError("reactance range must stay positive");
  double b1 = b_of(lo_x);
  double b2 = b_of(hi_x);
  double bmin = std::min(b1, b2);
  double bmax = std::max(b1, b2);
  if (r > lo_x && r < hi_x) bmin = std::min(bmin, b_of(r));
  return {bmin, bmax};
}

// Inverse of the series susceptance for fixed conductance:
// with y = g + jb, z = 1/y has x = -b / (g^2 + b^2).
inline double reactance_from(double g, double b) {
  return -b / (g * g + b * b);
}

class GridModel {
 public:
  GridModel() = default;
  GridModel(std::vector<Bus> buses, std::vector<Branch> branches,
            double base_mva = 100.0)
      : buses_(std::move(buses)),
        branches_(std::move(branches)),
        base_mva_(base_mva) {
    validate();
  }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const Bus& bus(int i) const { return buses_.at(i); }
  const Branch& branch(int k) const { return branches_.at(k); }
  double base_mva() const { return base_mva_; }

  int n_bus() const { return static_cast<int>(buses_.size()); }
  int n_branch() const { return static_cast<int>(branches_.size()); }
  // Non-reference bus count; the state has 2 * n_free() entries.
  int n_free() const { return n_bus() - 1; }
  int n_state() const { return 2 * n_free(); }
  int n_meas() const { return 2 * n_bus() + 4 * n_branch(); }
  int ref() const { return ref_; }

  // Indices of non-reference buses in ascending order.
  const std::vector<int>& free_buses() const { return free_; }

  int bus_index(int id) const {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end())
      throw ModelError("unknown bus id " + std::to_string(id));
    return it->second;
  }

  Vec conductance() const { return collect(&Branch::g); }
  Vec susceptance() const { return collect(&Branch::b); }
  Vec b_lower() const { return collect(&Branch::b_min); }
  Vec b_upper() const { return collect(&Branch::b_max); }
  Vec taps() const { return collect(&Branch::tap); }
  Vec reactance() const { return collect(&Branch::x); }

  std::vector<int> dfacts_branches() const {
    std::vector<int> out;
    for (int k = 0; k < n_branch(); ++k)
      if (branches_[k].dfacts) out.push_back(k);
    return out;
  }

  bool operator==(const GridModel& o) const {
    return buses_ == o.buses_ && branches_ == o.branches_ &&
           base_mva_ == o.base_mva_;
  }

  // Replace series susceptances; conductances and reactance records stay
  // as they were so the model keeps its nominal description.
  GridModel with_susceptance(const Vec& b_new, double tol = 1e-12) const {
    require_dims(b_new.size() == n_branch(), "setpoint length != branch count");
    std::vector<int> bad;
    std::ostringstream msg;
    for (int k = 0; k < n_branch(); ++k) {
      const Branch& br = branches_[k];
      double slack = tol * std::max(1.0, std::abs(br.b));
      if (!(b_new[k] >= br.b_min - slack && b_new[k] <= br.b_max + slack)) {
        bad.push_back(br.id);
        msg << " branch " << br.id << " (b=" << b_new[k] << ", range ["
            << br.b_min << ", " << br.b_max << "])";
      }
    }
    if (!bad.empty())
      throw BoundsViolation("susceptance outside bounds:" + msg.str(), bad);
    GridModel out = *this;
    for (int k = 0; k < n_branch(); ++k) out.branches_[k].b = b_new[k];
    return out;
  }

 private:
  Vec collect(double Branch::*field) const {
    Vec v(n_branch());
    for (int k = 0; k < n_branch(); ++k) v[k] = branches_[k].*field;
    return v;
  }

  void validate() {
    if (buses_.empty()) throw ModelError("case has no buses");
    id_to_index_.clear();
    ref_ = -1;
    for (int i = 0; i < n_bus(); ++i) {
      if (!id_to_index_.emplace(buses_[i].id, i).second)
        throw ModelError("duplicate bus id " + std::to_string(buses_[i].id));
      if (buses_[i].type == BusType::ref) {
        if (ref_ >= 0) throw ModelError("more than one reference bus");
        ref_ = i;
      }
    }
    if (ref_ < 0) throw ModelError("missing reference bus");
    std::set<int> ids;
    for (const Branch& br : branches_) {
      if (!ids.insert(br.id).second)
        throw ModelError("duplicate branch id " + std::to_string(br.id));
      if (br.from < 0 || br.from >= n_bus() || br.to < 0 || br.to >= n_bus() ||
          br.from == br.to)
        throw ModelError("branch " + std::to_string(br.id) +
                         " has invalid terminals");
      if (!(br.tap > 0.0))
        throw ModelError("branch " + std::to_string(br.id) +
                         " has nonpositive tap");
      if (!(br.b_min <= br.b + 1e-12 && br.b <= br.b_max + 1e-12))
        throw ModelError("branch " + std::to_string(br.id) +
                         " susceptance outside its own bounds");
    }
    // Connectivity by union-find.
    std::vector<int> parent(n_bus());
    for (int i = 0; i < n_bus(); ++i) parent[i] = i;
    auto find = [&](int a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    for (const Branch& br : branches_) parent[find(br.from)] = find(br.to);
    for (int i = 0; i < n_bus(); ++i)
      if (find(i) != find(ref_)) throw ModelError("disconnected graph");
    free_.clear();
    for (int i = 0; i < n_bus(); ++i)
      if (i != ref_) free_.push_back(i);
  }

  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  double base_mva_ = 100.0;
  int ref_ = -1;
  std::vector<int> free_;
  std::map<int, int> id_to_index_;
};

// Build a branch from its series impedance and D-FACTS description.
inline Branch make_branch(int id, int from, int to, double r, double x,
                          double tap, bool dfacts, double eta) {
  if (!(x > 0.0) && !(r > 0.0))
    throw ModelError("branch " + std::to_string(id) + " has zero impedance");
  Branch br;
  br.id = id;
  br.from = from;
  br.to = to;
  br.r = r;
  br.x = x;
  double den = r * r + x * x;
  br.g = r / den;
  br.b = -x / den;
  br.tap = tap;
  br.dfacts = dfacts && eta > 0.0;
  br.eta = eta;
  if (br.dfacts) {
    auto [lo, hi] = susceptance_bounds(r, x, eta);
    br.b_min = lo;
    br.b_max = hi;
  } else {
    br.b_min = br.b_max = br.b;
  }
  return br;
}

// Parse the versioned JSON case document.
inline GridModel parse_case(const nlohmann::json& doc) {
  try {
    if (!doc.contains("version")) throw ModelError("case document lacks version");
    int version = doc.at("version").get<int>();
    if (version != 1)
      throw ModelError("unsupported case version " + std::to_string(version));
    double base = doc.value("baseMVA", 100.0);
    if (!(base > 0.0)) throw ModelError("baseMVA must be positive");
    std::vector<Bus> buses;
    std::map<int, int> idx;
    for (const auto& jb : doc.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.type = bus_type_from_string(jb.at("type").get<std::string>());
      b.base_kv = jb.value("baseKV", 0.0);
      b.vm = jb.value("vm", 1.0);
      b.va = jb.value("va", 0.0) * std::numbers::pi / 180.0;
      b.pd = jb.value("pd", 0.0) / base;
      b.qd = jb.value("qd", 0.0) / base;
      if (!idx.emplace(b.id, static_cast<int>(buses.size())).second)
        throw ModelError("duplicate bus id " + std::to_string(b.id));
      buses.push_back(b);
    }
    std::vector<Branch> branches;
    int k = 0;
    for (const auto& jr : doc.at("branches")) {
      ++k;
      int id = jr.value("id", k);
      int f = jr.at("from").get<int>();
      int t = jr.at("to").get<int>();
      if (!idx.count(f) || !idx.count(t))
        throw ModelError("branch " + std::to_string(id) +
                         " references an unknown bus");
      double tap = jr.value("tap", 1.0);
      if (!(tap > 0.0))
        throw ModelError("branch " + std::to_string(id) + " has nonpositive tap");
      branches.push_back(make_branch(id, idx[f], idx[t], jr.at("r").get<double>(),
                                     jr.at("x").get<double>(), tap,
                                     jr.value("dfacts", false),
                                     jr.value("eta", 0.0)));
    }
    return GridModel(std::move(buses), std::move(branches), base);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed case document: ") + e.what());
  }
}

inline GridModel parse_case(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("case document is not JSON: ") + e.what());
  }
  return parse_case(doc);
}

inline nlohmann::json case_to_json(const GridModel& g) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["baseMVA"] = g.base_mva();
  doc["buses"] = nlohmann::json::array();
  for (const Bus& b : g.buses()) {
    doc["buses"].push_back({{"id", b.id},
                            {"type", to_string(b.type)},
                            {"vm", b.vm},
                            {"va", b.va * 180.0 / std::numbers::pi},
                            {"pd", b.pd * g.base_mva()},
                            {"qd", b.qd * g.base_mva()}});
  }
  doc["branches"] = nlohmann::json::array();
  for (const Branch& br : g.branches()) {
    doc["branches"].push_back({{"id", br.id},
                               {"from", g.bus(br.from).id},
                               {"to", g.bus(br.to).id},
                               {"r", br.r},
                               {"x", br.x},
                               {"tap", br.tap},
                               {"dfacts", br.dfacts},
                               {"eta", br.eta}});
  }
  return doc;
}

// Reactance implied by a susceptance setpoint with conductances held fixed,
// and the mean relative change over D-FACTS branches.
inline double reactance_perturbation_ratio(const GridModel& g, const Vec& b_new) {
  auto idx = g.dfacts_branches();
  if (idx.empty()) return 0.0;
  double acc = 0.0;
  for (int k : idx) {
    const Branch& br = g.branch(k);
    double x0 = reactance_from(br.g, br.b);
    double x1 = reactance_from(br.g, b_new[k]);
    acc += std::abs(x1 - x0) / std::abs(x0);
  }
  return acc / static_cast<double>(idx.size());
}

inline GridModel apply_setpoint(const GridModel& g, const Vec& b_new) {
  return g.with_susceptance(b_new);
}

}  // namespace fdimtd

// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

// Small dense semidefinite programs in LMI form:
//
//   maximize  c'y   subject to   F(y) = F0 + sum_i y_i F_i  >= 0
//
// with F block diagonal. Diagonal blocks carry linear inequalities. The
// solver is a primal-dual interior-point method (HKM direction, Mehrotra
// predictor-corrector, infeasible start) working on the equivalent pair
//
//   primal:  min <C, X>   s.t. <A_i, X> = c_i, X >= 0
//   dual:    max c'y      s.t. Z = C - sum_i y_i A_i >= 0
//
// with C = F0 and A_i = -F_i.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "fdimtd/core.hpp"

namespace fdimtd::sdp {

enum class Status { optimal, infeasible, unbounded, numerical_failure };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::infeasible: return "infeasible";
    case Status::unbounded: return "unbounded";
    case Status::numerical_failure: return "numerical-failure";
  }
  return "?";
}

struct BlockShape {
  int dim = 0;
  bool diagonal = false;
};

class Problem {
 public:
  explicit Problem(int n_vars = 0) : objective_(Vec::Zero(n_vars)), coef_(n_vars + 1) {}

  int n_vars() const { return static_cast<int>(objective_.size()); }
  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  const std::vector<BlockShape>& blocks() const { return blocks_; }

  Vec& objective() { return objective_; }
  const Vec& objective() const { return objective_; }

  int add_block(int dim, bool diagonal = false) {
    if (dim < 1) throw DimensionError("LMI block dimension must be positive");
    blocks_.push_back({dim, diagonal});
    for (auto& per_var : coef_) per_var.emplace_back();
    return n_blocks() - 1;
  }

  // var = -1 addresses the constant term F0. Off-diagonal entries are
  // mirrored so every block stays exactly symmetric.
  void add_entry(int var, int blk, int i, int j, double v) {
    check(var, blk);
    const BlockShape& s = blocks_[blk];
    if (i < 0 || j < 0 || i >= s.dim || j >= s.dim) throw DimensionError("LMI entry out of range");
    if (s.diagonal && i != j) throw DimensionError("off-diagonal entry in a diagonal block");
    Mat& m = slot(var, blk);
    m(i, j) += v;
    if (i != j) m(j, i) += v;
  }

  // Adds a sub-block at (r0, c0). Diagonal sub-blocks must be symmetric;
  // off-diagonal ones are mirrored.
  void add_submatrix(int var, int blk, int r0, int c0, const Mat& sub) {
    check(var, blk);
    const BlockShape& s = blocks_[blk];
    if (r0 < 0 || c0 < 0 || r0 + sub.rows() > s.dim || c0 + sub.cols() > s.dim)
      throw DimensionError("LMI sub-block out of range");
    Mat& m = slot(var, blk);
    if (r0 == c0) {
      require_dims(sub.rows() == sub.cols(), "diagonal sub-block must be square");
      if ((sub - sub.transpose()).cwiseAbs().maxCoeff() > 0.0)
        throw DimensionError("diagonal sub-block must be symmetric");
      m.block(r0, c0, sub.rows(), sub.cols()) += sub;
    } else {
      if (r0 < c0 + sub.cols() && c0 < r0 + sub.rows())
        throw DimensionError("off-diagonal sub-block overlaps the diagonal");
      m.block(r0, c0, sub.rows(), sub.cols()) += sub;
      m.block(c0, r0, sub.cols(), sub.rows()) += sub.transpose();
    }
    if (s.diagonal && (m - Mat(m.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 0.0)
      throw DimensionError("off-diagonal entry in a diagonal block");
  }

  // Empty matrix when the term is absent.
  const Mat& term(int var, int blk) const { return coef_.at(var + 1).at(blk); }

  Mat evaluate(int blk, const Vec& y) const {
    const int d = blocks_[blk].dim;
    Mat f = term(-1, blk).size() ? term(-1, blk) : Mat::Zero(d, d);
    for (int i = 0; i < n_vars(); ++i)
      if (term(i, blk).size() && y[i] != 0.0) f += y[i] * term(i, blk);
    return f;
  }

  double min_eigenvalue(const Vec& y) const {
    double lo = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_blocks(); ++k) {
      Mat f = evaluate(k, y);
      double e = blocks_[k].diagonal
                     ? f.diagonal().minCoeff()
                     : Eigen::SelfAdjointEigenSolver<Mat>(f, Eigen::EigenvaluesOnly).eigenvalues()[0];
      lo = std::min(lo, e);
    }
    return lo;
  }

 private:
  void check(int var, int blk) const {
    if (var < -1 || var >= n_vars()) throw DimensionError("LMI variable index out of range");
    if (blk < 0 || blk >= n_blocks()) throw DimensionError("LMI block index out of range");
  }
  Mat& slot(int var, int blk) {
    Mat& m = coef_[var + 1][blk];
    if (!m.size()) m = Mat::Zero(blocks_[blk].dim, blocks_[blk].dim);
    return m;
  }

  Vec objective_;
  std::vector<BlockShape> blocks_;
  std::vector<std::vector<Mat>> coef_;  // [var + 1][block]
};

struct Options {
  double tol_gap = 1e-9;
  // Added to |p| + |d| in the gap denominator. Well below 1 so that small
  // optima of unit-scaled problems are still resolved relatively.
  double gap_floor = 1e-4;
  double tol_feas = 1e-9;
  double tol_infeasibility = 1e-9;
  double step_fraction = 0.98;
  int max_iter = 120;
};

struct Solution {
  Status status = Status::numerical_failure;
  Vec y;
  double objective = 0.0;       // c'y
  double dual_objective = 0.0;  // <C, X> in original units
  int iterations = 0;
  double relative_gap = 0.0;
  double primal_infeasibility = 0.0;
  double dual_infeasibility = 0.0;
  double min_eigenvalue = 0.0;  // of F(y), original units
  double wall_ms = 0.0;
  std::string message;
};

namespace detail {

// Block-diagonal symmetric matrix; diagonal blocks store only a column.
struct BlockMat {
  std::vector<Mat> b;

  static BlockMat identity(const std::vector<BlockShape>& s, double v) {
    BlockMat m;
    for (const auto& k : s)
      m.b.push_back(k.diagonal ? Mat(Mat::Constant(k.dim, 1, v)) : Mat(v * Mat::Identity(k.dim, k.dim)));
    return m;
  }
  static BlockMat zeros(const std::vector<BlockShape>& s) { return identity(s, 0.0); }
};

inline double dot(const BlockMat& a, const BlockMat& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.b.size(); ++k) s += a.b[k].cwiseProduct(b.b[k]).sum();
  return s;
}

inline double fro(const BlockMat& a) { return std::sqrt(dot(a, a)); }

inline void axpy(BlockMat& y, double a, const BlockMat& x) {
  for (std::size_t k = 0; k < y.b.size(); ++k) y.b[k] += a * x.b[k];
}

// Standard-form data after scaling.
struct Data {
  std::vector<BlockShape> shape;
  BlockMat c;
  std::vector<BlockMat> a;               // a[i]
  std::vector<std::vector<int>> touches; // blocks where a[i] is nonzero
  Vec rhs;
  int n = 0;  // total order
};

inline Mat pack(const Mat& full, const BlockShape& s) {
  if (!full.size()) return s.diagonal ? Mat(Mat::Zero(s.dim, 1)) : Mat(Mat::Zero(s.dim, s.dim));
  return s.diagonal ? Mat(full.diagonal()) : full;
}

inline BlockMat apply_at(const Data& d, const Vec& y) {
  BlockMat s = BlockMat::zeros(d.shape);
  for (std::size_t i = 0; i < d.a.size(); ++i)
    if (y[i] != 0.0)
      for (int k : d.touches[i]) s.b[k] += y[i] * d.a[i].b[k];
  return s;
}

inline Vec apply_a(const Data& d, const BlockMat& x) {
  Vec v(d.a.size());
  for (std::size_t i = 0; i < d.a.size(); ++i) {
    double s = 0.0;
    for (int k : d.touches[i]) s += d.a[i].b[k].cwiseProduct(x.b[k]).sum();
    v[i] = s;
  }
  return v;
}

// Largest alpha in (0, 1] keeping x + alpha dx positive semidefinite.
inline double max_step(const BlockMat& x, const BlockMat& dx, const std::vector<BlockShape>& s,
                       bool& ok) {
  double alpha = 1.0;
  ok = true;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k].diagonal) {
      for (Eigen::Index i = 0; i < x.b[k].rows(); ++i)
        if (dx.b[k](i, 0) < 0.0) alpha = std::min(alpha, -x.b[k](i, 0) / dx.b[k](i, 0));
      continue;
    }
    Eigen::LLT<Mat> llt(x.b[k]);
    if (llt.info() != Eigen::Success) {
      ok = false;
      return 0.0;
    }
    Mat l = llt.matrixL();
    Mat t = l.triangularView<Eigen::Lower>().solve(dx.b[k]);
    t = l.triangularView<Eigen::Lower>().solve(Mat(t.transpose()));
    Mat sym = 0.5 * (t + t.transpose());
    double lo = Eigen::SelfAdjointEigenSolver<Mat>(sym, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (lo < 0.0) alpha = std::min(alpha, -1.0 / lo);
  }
  return alpha;
}

}  // namespace detail

// Writes the problem in SDPA sparse format. SDPA minimizes c'x subject to
// sum_i x_i F_i - F_0 >= 0, so the objective and F_0 change sign.
inline std::string to_sdpa(const Problem& p, const std::string& comment = "") {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "\"" << comment << "\n";
  o << p.n_vars() << "\n" << p.n_blocks() << "\n";
  for (const auto& b : p.blocks()) o << (b.diagonal ? -b.dim : b.dim) << " ";
  o << "\n";
  for (int i = 0; i < p.n_vars(); ++i) o << -p.objective()[i] << " ";
  o << "\n";
  for (int var = -1; var < p.n_vars(); ++var)
    for (int k = 0; k < p.n_blocks(); ++k) {
      const Mat& m = p.term(var, k);
      if (!m.size()) continue;
      const double sign = var < 0 ? -1.0 : 1.0;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = i; j < m.cols(); ++j)
          if (m(i, j) != 0.0)
            o << var + 1 << " " << k + 1 << " " << i + 1 << " " << j + 1 << " " << sign * m(i, j) << "\n";
    }
  return o.str();
}

inline Problem from_sdpa(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> body;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '"' || line[0] == '*') continue;
    for (char& ch : line)
      if (ch == ',' || ch == '{' || ch == '}' || ch == '(' || ch == ')') ch = ' ';
    body.push_back(line);
  }
  std::istringstream tok([&] {
    std::string all;
    for (const auto& l : body) all += l + "\n";
    return all;
  }());
  int m = 0, nb = 0;
  if (!(tok >> m >> nb) || m < 0 || nb < 1) throw ModelError("malformed SDPA header");
  Problem p(m);
  for (int k = 0; k < nb; ++k) {
    int d = 0;
    if (!(tok >> d) || d == 0) throw ModelError("malformed SDPA block structure");
    p.add_block(std::abs(d), d < 0);
  }
  for (int i = 0; i < m; ++i)
    if (!(tok >> p.objective()[i])) throw ModelError("malformed SDPA objective");
  p.objective() = -p.objective();
  int var, blk, i, j;
  double v;
  while (tok >> var >> blk >> i >> j >> v) {
    if (var < 0 || var > m) throw ModelError("SDPA entry references an unknown matrix");
    p.add_entry(var - 1, blk - 1, i - 1, j - 1, var == 0 ? -v : v);
  }
  return p;
}

inline Solution solve(const Problem& prob, const Options& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  using detail::BlockMat;
  Solution sol;
  const int m = prob.n_vars();
  detail::Data d;
  d.shape = prob.blocks();
  for (const auto& b : d.shape) d.n += b.dim;

  // Standard form with per-variable and global normalization.
  Vec col_scale = Vec::Ones(m);
  d.c.b.resize(d.shape.size());
  for (int k = 0; k < prob.n_blocks(); ++k) d.c.b[k] = detail::pack(prob.term(-1, k), d.shape[k]);
  d.a.resize(m);
  d.touches.resize(m);
  d.rhs = prob.objective();
  for (int i = 0; i < m; ++i) {
    d.a[i] = BlockMat::zeros(d.shape);
    for (int k = 0; k < prob.n_blocks(); ++k)
      if (prob.term(i, k).size()) {
        d.a[i].b[k] = -detail::pack(prob.term(i, k), d.shape[k]);
        if (d.a[i].b[k].cwiseAbs().maxCoeff() > 0.0) d.touches[i].push_back(k);
      }
    double nrm = detail::fro(d.a[i]);
    if (nrm == 0.0) {
      if (d.rhs[i] != 0.0) {
        sol.status = Status::unbounded;
        sol.message = "objective variable " + std::to_string(i) + " is unconstrained";
        sol.y = Vec::Zero(m);
        return sol;
      }
      continue;
    }
    col_scale[i] = 1.0 / nrm;
    for (int k : d.touches[i]) d.a[i].b[k] *= col_scale[i];
    d.rhs[i] *= col_scale[i];
  }
  const double c_scale = std::max(1.0, detail::fro(d.c));
  const double b_scale = std::max(1.0, d.rhs.norm());
  for (auto& blk : d.c.b) blk /= c_scale;
  d.rhs /= b_scale;
  const double norm_c = detail::fro(d.c), norm_b = d.rhs.norm();

  const double start = std::max(10.0, std::sqrt(static_cast<double>(d.n)));
  BlockMat x = BlockMat::identity(d.shape, start);
  BlockMat z = BlockMat::identity(d.shape, start);
  Vec y = Vec::Zero(m);
  const double nn = static_cast<double>(d.n);

  auto finish = [&](Status st, std::string msg) {
    // A late breakdown keeps the last iterate when it is already accurate.
    if (st == Status::numerical_failure && sol.iterations > 0 && sol.relative_gap < 1e-6 &&
        sol.primal_infeasibility < 1e-6 && sol.dual_infeasibility < 1e-6) {
      st = Status::optimal;
      msg += "; accepted at reduced accuracy";
    }
    sol.status = st;
    sol.message = msg;
    sol.y = (y.array() * col_scale.array()).matrix() * c_scale;
    sol.objective = prob.objective().dot(sol.y);
    sol.dual_objective = detail::dot(d.c, x) * c_scale * b_scale;
    sol.min_eigenvalue = prob.min_eigenvalue(sol.y);
    sol.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return sol;
  };

  for (int it = 0; it < opt.max_iter; ++it) {
    sol.iterations = it;
    Vec rp = d.rhs - detail::apply_a(d, x);
    BlockMat rd = d.c;
    detail::axpy(rd, -1.0, detail::apply_at(d, y));
    detail::axpy(rd, -1.0, z);
    const double mu = detail::dot(x, z) / nn;
    const double pobj = detail::dot(d.c, x), dobj = d.rhs.dot(y);
    sol.relative_gap = std::abs(pobj - dobj) / (opt.gap_floor + std::abs(pobj) + std::abs(dobj));
    sol.primal_infeasibility = rp.norm() / (1.0 + norm_b);
    sol.dual_infeasibility = detail::fro(rd) / (1.0 + norm_c);
    if (!std::isfinite(mu) || !std::isfinite(pobj) || !std::isfinite(dobj))
      return finish(Status::numerical_failure, "non-finite iterate");
    if (sol.relative_gap < opt.tol_gap && sol.primal_infeasibility < opt.tol_feas &&
        sol.dual_infeasibility < opt.tol_feas)
      return finish(Status::optimal, "converged");

    // Certificates: X >= 0 with A(X) ~ 0 and <C, X> < 0 proves the LMI
    // empty; y with -A'y >= 0 and c'y > 0 proves unboundedness.
    if (pobj < 0.0) {
      Vec ax = detail::apply_a(d, x);
      if (ax.norm() / -pobj < opt.tol_infeasibility)
        return finish(Status::infeasible, "primal ray certifies an empty LMI");
    }
    if (dobj > 0.0) {
      BlockMat ray = rd;
      detail::axpy(ray, -1.0, d.c);  // -(A'y) - Z
      detail::axpy(ray, 1.0, z);     // -(A'y)
      double neg = 0.0;
      for (std::size_t k = 0; k < ray.b.size(); ++k) {
        double e = d.shape[k].diagonal
                       ? ray.b[k].minCoeff()
                       : Eigen::SelfAdjointEigenSolver<Mat>(ray.b[k], Eigen::EigenvaluesOnly).eigenvalues()[0];
        neg = std::min(neg, e);
      }
      if (-neg / dobj < opt.tol_infeasibility && detail::fro(ray) / dobj > 1e-3 &&
          dobj > 1e6 * (1.0 + std::abs(pobj)))
        return finish(Status::unbounded, "dual ray certifies an unbounded objective");
    }

    // Z^-1 and the Schur complement of the HKM direction.
    BlockMat zinv;
    zinv.b.resize(d.shape.size());
    for (std::size_t k = 0; k < d.shape.size(); ++k) {
      if (d.shape[k].diagonal) {
        zinv.b[k] = z.b[k].cwiseInverse();
        continue;
      }
      Eigen::LLT<Mat> llt(z.b[k]);
      if (llt.info() != Eigen::Success)
        return finish(Status::numerical_failure, "dual slack lost definiteness");
      zinv.b[k] = llt.solve(Mat::Identity(d.shape[k].dim, d.shape[k].dim));
      zinv.b[k] = 0.5 * (zinv.b[k] + zinv.b[k].transpose());
    }
    Mat schur = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      for (int k : d.touches[i]) {
        Mat g = d.shape[k].diagonal
                    ? Mat(d.a[i].b[k].cwiseProduct(x.b[k]).cwiseProduct(zinv.b[k]))
                    : Mat(x.b[k] * d.a[i].b[k] * zinv.b[k]);
        for (int j = 0; j <= i; ++j) {
          if (std::find(d.touches[j].begin(), d.touches[j].end(), k) == d.touches[j].end()) continue;
          schur(i, j) += d.a[j].b[k].cwiseProduct(g).sum();
        }
      }
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < i; ++j) schur(j, i) = schur(i, j);
    Eigen::LDLT<Mat> ldlt(schur);
    if (ldlt.info() != Eigen::Success || ldlt.isNegative())
      return finish(Status::numerical_failure, "Schur complement factorization failed");

    // Direction for a complementarity target K (so that X Z -> K).
    auto direction = [&](const BlockMat& k_target, BlockMat& dx, Vec& dy, BlockMat& dz) {
      BlockMat kz, xrz;
      kz.b.resize(d.shape.size());
      xrz.b.resize(d.shape.size());
      for (std::size_t k = 0; k < d.shape.size(); ++k) {
        bool dg = d.shape[k].diagonal;
        kz.b[k] = dg ? Mat(k_target.b[k].cwiseProduct(zinv.b[k])) : Mat(k_target.b[k] * zinv.b[k]);
        xrz.b[k] = dg ? Mat(x.b[k].cwiseProduct(rd.b[k]).cwiseProduct(zinv.b[k]))
                      : Mat(x.b[k] * rd.b[k] * zinv.b[k]);
      }
      Vec rhs = d.rhs - detail::apply_a(d, kz) + detail::apply_a(d, xrz);
      dy = ldlt.solve(rhs);
      dz = rd;
      detail::axpy(dz, -1.0, detail::apply_at(d, dy));
      dx.b.resize(d.shape.size());
      for (std::size_t k = 0; k < d.shape.size(); ++k) {
        bool dg = d.shape[k].diagonal;
        Mat t = dg ? Mat(kz.b[k] - x.b[k] - x.b[k].cwiseProduct(dz.b[k]).cwiseProduct(zinv.b[k]))
                   : Mat(kz.b[k] - x.b[k] - x.b[k] * dz.b[k] * zinv.b[k]);
        dx.b[k] = dg ? t : Mat(0.5 * (t + t.transpose()));
      }
    };

    // Predictor.
    BlockMat dx, dz;
    Vec dy;
    direction(BlockMat::zeros(d.shape), dx, dy, dz);
    bool okp = true, okd = true;
    double ap = detail::max_step(x, dx, d.shape, okp);
    double ad_ = detail::max_step(z, dz, d.shape, okd);
    if (!okp || !okd) return finish(Status::numerical_failure, "iterate lost definiteness");
    BlockMat xa = x, za = z;
    detail::axpy(xa, ap, dx);
    detail::axpy(za, ad_, dz);
    const double mu_aff = detail::dot(xa, za) / nn;
    const double sigma = std::min(1.0, std::pow(std::max(mu_aff, 0.0) / mu, 3));

    // Corrector. The second-order term stays unsymmetrized to match the
    // X dZ + dX Z form the direction is derived from.
    BlockMat target = BlockMat::identity(d.shape, sigma * mu);
    for (std::size_t k = 0; k < d.shape.size(); ++k)
      target.b[k] -= d.shape[k].diagonal ? Mat(dx.b[k].cwiseProduct(dz.b[k])) : Mat(dx.b[k] * dz.b[k]);
    BlockMat dx2, dz2;
    Vec dy2;
    direction(target, dx2, dy2, dz2);
    ap = detail::max_step(x, dx2, d.shape, okp);
    ad_ = detail::max_step(z, dz2, d.shape, okd);
    if (!okp || !okd) return finish(Status::numerical_failure, "iterate lost definiteness");
    const double gp = std::min(1.0, opt.step_fraction * ap);
    const double gd = std::min(1.0, opt.step_fraction * ad_);
    if (gp < 1e-12 && gd < 1e-12) return finish(Status::numerical_failure, "step length collapsed");
    detail::axpy(x, gp, dx2);
    y += gd * dy2;
    detail::axpy(z, gd, dz2);
  }
  sol.iterations = opt.max_iter;
  return finish(Status::numerical_failure, "iteration limit reached");
}

}  // namespace fdimtd::sdp

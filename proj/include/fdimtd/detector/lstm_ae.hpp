// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdimtd/autodiff/adam.hpp"
#include "fdimtd/autodiff/tape.hpp"

namespace fdimtd {

class TrainingError : public Error {
 public:
  using Error::Error;
};

// A window is P x T: column j holds the measurement at step j.
using Window = Mat;

struct Normalizer {
  Vec mean;
  Vec scale;

  static Normalizer fit(const std::vector<Window>& windows, double floor = 1e-6) {
    require_dims(!windows.empty(), "normalizer needs data");
    const Eigen::Index p = windows[0].rows();
    Vec sum = Vec::Zero(p), sq = Vec::Zero(p);
    double count = 0.0;
    for (const Window& w : windows) {
      require_dims(w.rows() == p, "window channel count mismatch");
      sum += w.rowwise().sum();
      sq += w.cwiseAbs2().rowwise().sum();
      count += static_cast<double>(w.cols());
    }
    Normalizer n;
    n.mean = sum / count;
    Vec var = (sq / count - n.mean.cwiseAbs2()).cwiseMax(0.0);
    n.scale = var.cwiseSqrt().cwiseMax(floor);
    return n;
  }

  Mat normalize(const Mat& z) const {
    return (z.colwise() - mean).array().colwise() / scale.array();
  }
  Mat denormalize(const Mat& u) const {
    return (u.array().colwise() * scale.array()).matrix().colwise() + mean;
  }
};

template <class V>
struct LstmParams {
  V w;  // 4h x in
  V u;  // 4h x h
  V b;  // 4h x 1
  int hid = 0;
};

template <class V>
struct NetParams {
  std::vector<LstmParams<V>> lstm;
  V dense_w;
  V dense_b;
};

// Plain Eigen evaluation.
struct NumericOps {
  using V = Mat;
  Mat matmul(const Mat& a, const Mat& b) { return a * b; }
  Mat add(const Mat& a, const Mat& b) {
    if (a.cols() == b.cols()) return a + b;
    return a.colwise() + b.col(0);
  }
  Mat sub(const Mat& a, const Mat& b) { return a - b; }
  Mat mul(const Mat& a, const Mat& b) { return a.cwiseProduct(b); }
  Mat sigmoid(const Mat& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }
  Mat tanh(const Mat& a) { return a.array().tanh().matrix(); }
  Mat slice_rows(const Mat& a, int s, int n) { return a.middleRows(s, n); }
  Mat constant(const Mat& a) { return a; }
  Mat zeros(int r, int c) { return Mat::Zero(r, c); }
};

// Evaluation recorded on a tape.
struct TapeOps {
  using V = ad::Var;
  ad::Tape& t;
  V matmul(V a, V b) { return t.matmul(a, b); }
  V add(V a, V b) { return t.add(a, b); }
  V sub(V a, V b) { return t.sub(a, b); }
  V mul(V a, V b) { return t.mul(a, b); }
  V sigmoid(V a) { return t.sigmoid(a); }
  V tanh(V a) { return t.tanh(a); }
  V slice_rows(V a, int s, int n) { return t.slice_rows(a, s, n); }
  V constant(const Mat& a) { return t.constant(a); }
  V zeros(int r, int c) { return t.constant(Mat::Zero(r, c)); }
};

template <class V>
struct CellState {
  V h;
  V c;
};

// One time step through the stacked network; `states` is updated in place.
// Gate blocks in the 4h pre-activation are ordered input, forget, output,
// candidate.
template <class Ops>
typename Ops::V network_step(Ops& ops, const NetParams<typename Ops::V>& p,
                             const typename Ops::V& x,
                             std::vector<CellState<typename Ops::V>>& states) {
  using V = typename Ops::V;
  V in = x;
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const auto& L = p.lstm[l];
    const int h = L.hid;
    V z = ops.add(ops.add(ops.matmul(L.w, in), ops.matmul(L.u, states[l].h)), L.b);
    V ig = ops.sigmoid(ops.slice_rows(z, 0, h));
    V fg = ops.sigmoid(ops.slice_rows(z, h, h));
    V og = ops.sigmoid(ops.slice_rows(z, 2 * h, h));
    V gg = ops.tanh(ops.slice_rows(z, 3 * h, h));
    V c = ops.add(ops.mul(fg, states[l].c), ops.mul(ig, gg));
    V hn = ops.mul(og, ops.tanh(c));
    states[l] = {hn, c};
    in = hn;
  }
  return ops.add(ops.matmul(p.dense_w, in), p.dense_b);
}

template <class Ops>
std::vector<CellState<typename Ops::V>> zero_states(
    Ops& ops, const NetParams<typename Ops::V>& p, int batch) {
  std::vector<CellState<typename Ops::V>> s;
  for (const auto& L : p.lstm) s.push_back({ops.zeros(L.hid, batch), ops.zeros(L.hid, batch)});
  return s;
}

struct LstmAeModel {
  static constexpr int kFormatVersion = 1;

  int input_dim = 0;
  int window = 6;
  std::vector<int> encoder_widths;  // hidden widths, bottleneck last
  NetParams<Mat> params;
  Normalizer norm;
  double tau = std::numeric_limits<double>::infinity();
  // Test fixture only: reconstruction returns its input.
  bool decoder_bypass = false;

  std::vector<int> decoder_widths() const {
    std::vector<int> d(encoder_widths.rbegin() + 1, encoder_widths.rend());
    return d;
  }

  std::size_t parameter_count() const {
    std::size_t n = params.dense_w.size() + params.dense_b.size();
    for (const auto& L : params.lstm) n += L.w.size() + L.u.size() + L.b.size();
    return n;
  }

  // All trainable matrices in a fixed order.
  std::vector<Mat*> parameter_list() {
    std::vector<Mat*> out;
    for (auto& L : params.lstm) {
      out.push_back(&L.w);
      out.push_back(&L.u);
      out.push_back(&L.b);
    }
    out.push_back(&params.dense_w);
    out.push_back(&params.dense_b);
    return out;
  }
};

// Hidden widths that follow the 68 -> 48 -> 29 -> 10 profile scaled to the
// measurement dimension.
inline std::vector<int> default_encoder_widths(int input_dim) {
  const double ratios[] = {48.0 / 68.0, 29.0 / 68.0, 10.0 / 68.0};
  std::vector<int> w;
  for (double r : ratios) w.push_back(std::max(2, static_cast<int>(std::lround(r * input_dim))));
  return w;
}

namespace detail {

inline Mat orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

inline Mat glorot(int rows, int cols, Rng& rng) {
  double lim = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> u(-lim, lim);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace detail

inline LstmAeModel init_model(int input_dim, int window,
                              std::vector<int> encoder_widths, Rng& rng) {
  if (window < 2) throw DomainError("window length must be at least 2");
  if (encoder_widths.empty()) throw DomainError("encoder needs at least one layer");
  LstmAeModel m;
  m.input_dim = input_dim;
  m.window = window;
  m.encoder_widths = encoder_widths;
  std::vector<int> chain = encoder_widths;
  for (int w : m.decoder_widths()) chain.push_back(w);
  int in = input_dim;
  for (int h : chain) {
    LstmParams<Mat> L;
    L.hid = h;
    L.w = detail::glorot(4 * h, in, rng);
    L.u.resize(4 * h, h);
    for (int g = 0; g < 4; ++g) L.u.middleRows(g * h, h) = detail::orthogonal(h, rng);
    L.b = Mat::Zero(4 * h, 1);
    L.b.middleRows(h, h).setOnes();
    m.params.lstm.push_back(std::move(L));
    in = h;
  }
  m.params.dense_w = detail::glorot(input_dim, in, rng);
  m.params.dense_b = Mat::Zero(input_dim, 1);
  m.norm.mean = Vec::Zero(input_dim);
  m.norm.scale = Vec::Ones(input_dim);
  return m;
}

inline LstmAeModel decoder_bypass_model(int input_dim, int window) {
  Rng rng(0);
  LstmAeModel m = init_model(input_dim, window, {2}, rng);
  m.decoder_bypass = true;
  return m;
}

// Per-window reconstruction losses for a batch of normalized windows that
// share one length. steps[j] is P x B.
inline Vec batch_losses_normalized(const LstmAeModel& m,
                                   const std::vector<Mat>& steps) {
  const Eigen::Index b = steps.empty() ? 0 : steps[0].cols();
  Vec acc = Vec::Zero(b);
  if (m.decoder_bypass) return acc;
  NumericOps ops;
  auto states = zero_states(ops, m.params, static_cast<int>(b));
  for (const Mat& x : steps) {
    Mat y = network_step(ops, m.params, x, states);
    acc += (y - x).cwiseAbs2().colwise().sum().transpose();
  }
  return acc / static_cast<double>(steps.size() * m.input_dim);
}

// Loss (1/TP) sum_j ||z_j - f(z_j)||^2 on normalized channels.
inline double reconstruction_loss(const LstmAeModel& m, const Window& w) {
  require_dims(w.rows() == m.input_dim && w.cols() == m.window,
               "window shape does not match the model");
  Mat u = m.norm.normalize(w);
  std::vector<Mat> steps;
  for (int j = 0; j < m.window; ++j) steps.push_back(u.col(j));
  return batch_losses_normalized(m, steps)[0];
}

inline Vec reconstruction_losses(const LstmAeModel& m,
                                 const std::vector<Window>& windows,
                                 std::size_t batch = 256) {
  Vec out(windows.size());
  for (std::size_t s = 0; s < windows.size(); s += batch) {
    std::size_t e = std::min(windows.size(), s + batch);
    std::vector<Mat> steps(m.window, Mat(m.input_dim, static_cast<Eigen::Index>(e - s)));
    for (std::size_t k = s; k < e; ++k) {
      require_dims(windows[k].rows() == m.input_dim && windows[k].cols() == m.window,
                   "window shape does not match the model");
      Mat u = m.norm.normalize(windows[k]);
      for (int j = 0; j < m.window; ++j) steps[j].col(k - s) = u.col(j);
    }
    out.segment(s, e - s) = batch_losses_normalized(m, steps);
  }
  return out;
}

// Stride-1 windows over a P x L series; entry k scores the window ending at
// column k + T - 1.
inline std::vector<Window> sliding_windows(const Mat& series, int window) {
  std::vector<Window> out;
  for (Eigen::Index e = window - 1; e < series.cols(); ++e)
    out.push_back(series.middleCols(e - window + 1, window));
  return out;
}

inline std::vector<Window> blocked_windows(const Mat& series, int window) {
  std::vector<Window> out;
  for (Eigen::Index s = 0; s + window <= series.cols(); s += window)
    out.push_back(series.middleCols(s, window));
  return out;
}

inline Vec score_series(const LstmAeModel& m, const Mat& series) {
  return reconstruction_losses(m, sliding_windows(series, m.window));
}

struct TrainingConfig {
  int epochs = 1000;
  int batch_size = 32;
  double lr = 0.001;
  int patience = 10;
  double min_delta = 0.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  double test_fraction = 0.2;
  int window = 6;
  std::vector<int> encoder_widths;  // empty: scaled default profile

  void validate() const {
    if (std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9)
      throw DomainError("split fractions must sum to 1");
    if (epochs < 1 || batch_size < 1 || patience < 0 || !(lr > 0.0))
      throw DomainError("invalid training hyperparameters");
  }
};

struct TrainingReport {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = -1;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;
};

namespace detail {

// Mean loss over a batch of windows, recorded on a tape with parameters as
// leaves. Returns the loss node.
inline ad::Var record_batch_loss(ad::Tape& tape, const LstmAeModel& m,
                                 const std::vector<Mat>& steps,
                                 NetParams<ad::Var>& leaves) {
  TapeOps ops{tape};
  leaves.lstm.clear();
  for (const auto& L : m.params.lstm)
    leaves.lstm.push_back({tape.leaf(L.w), tape.leaf(L.u), tape.leaf(L.b), L.hid});
  leaves.dense_w = tape.leaf(m.params.dense_w);
  leaves.dense_b = tape.leaf(m.params.dense_b);
  const int b = static_cast<int>(steps[0].cols());
  auto states = zero_states(ops, leaves, b);
  ad::Var total;
  for (const Mat& x : steps) {
    ad::Var xv = tape.constant(x);
    ad::Var y = network_step(ops, leaves, xv, states);
    ad::Var e = tape.sq_norm(tape.sub(y, xv));
    total = total.valid() ? tape.add(total, e) : e;
  }
  return tape.scale(total, 1.0 / (static_cast<double>(steps.size()) * m.input_dim * b));
}

inline std::vector<Mat> leaf_grads(const ad::Tape& tape, const NetParams<ad::Var>& v) {
  std::vector<Mat> g;
  for (const auto& L : v.lstm) {
    g.push_back(tape.grad(L.w));
    g.push_back(tape.grad(L.u));
    g.push_back(tape.grad(L.b));
  }
  g.push_back(tape.grad(v.dense_w));
  g.push_back(tape.grad(v.dense_b));
  return g;
}

}  // namespace detail

// Mini-batch Adam on normal windows with early stopping on validation loss.
// The best-validation parameters are restored at the end.
inline LstmAeModel train(const std::vector<Window>& train_windows,
                         const std::vector<Window>& validation_windows,
                         const TrainingConfig& cfg,
                         TrainingReport* report = nullptr) {
  cfg.validate();
  if (train_windows.empty()) throw TrainingError("empty training set");
  const int p = static_cast<int>(train_windows[0].rows());
  const int t = static_cast<int>(train_windows[0].cols());
  if (t != cfg.window) throw DimensionError("training windows do not match config.window");
  TrainingReport local;
  TrainingReport& rep = report ? *report : local;
  Rng rng(cfg.seed);
  std::vector<int> widths = cfg.encoder_widths.empty() ? default_encoder_widths(p)
                                                       : cfg.encoder_widths;
  LstmAeModel m = init_model(p, t, widths, rng);
  m.norm = Normalizer::fit(train_windows);
  std::size_t values = train_windows.size() * static_cast<std::size_t>(p * t);
  if (values < 10 * m.parameter_count())
    rep.warnings.push_back("training set has " + std::to_string(values) +
                           " values for " + std::to_string(m.parameter_count()) +
                           " parameters (fewer than 10 per parameter)");

  std::vector<Mat> train_norm;
  for (const Window& w : train_windows) train_norm.push_back(m.norm.normalize(w));
  const std::vector<Window>& val =
      validation_windows.empty() ? train_windows : validation_windows;
  if (validation_windows.empty())
    rep.warnings.push_back("no validation windows; early stopping uses training data");

  auto params = m.parameter_list();
  ad::AdamState adam(params, ad::AdamConfig{cfg.lr});
  NetParams<Mat> best = m.params;
  int since_best = 0;
  std::vector<int> order(train_norm.size());
  std::iota(order.begin(), order.end(), 0);
  ad::Tape tape;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Mat> steps(t, Mat(p, static_cast<Eigen::Index>(e - s)));
      for (std::size_t k = s; k < e; ++k)
        for (int j = 0; j < t; ++j) steps[j].col(k - s) = train_norm[order[k]].col(j);
      tape.clear();
      NetParams<ad::Var> leaves;
      ad::Var loss = detail::record_batch_loss(tape, m, steps, leaves);
      double lv = tape.scalar(loss);
      if (!std::isfinite(lv))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adam.step(params, detail::leaf_grads(tape, leaves));
      epoch_loss += lv * static_cast<double>(e - s);
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    double vl = reconstruction_losses(m, val).mean();
    if (!std::isfinite(vl))
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    rep.validation_loss.push_back(vl);
    if (vl < rep.best_validation_loss - cfg.min_delta) {
      rep.best_validation_loss = vl;
      rep.best_epoch = epoch;
      best = m.params;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  m.params = best;
  return m;
}

// Linear-interpolated empirical quantile.
inline double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DomainError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(v.size() - 1, lo + 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

// Sets tau to the (1 - fpr) quantile of validation losses.
inline double calibrate_threshold(LstmAeModel& m,
                                  const std::vector<Window>& validation,
                                  double target_fpr,
                                  std::vector<std::string>* warnings = nullptr) {
  if (!(target_fpr > 0.0 && target_fpr < 1.0))
    throw DomainError("target false-positive rate must lie in (0, 1)");
  if (validation.size() < 100 && warnings)
    warnings->push_back("threshold calibrated on only " +
                        std::to_string(validation.size()) +
                        " windows; low confidence");
  Vec losses = reconstruction_losses(m, validation);
  m.tau = empirical_quantile(to_std(losses), 1.0 - target_fpr);
  return m.tau;
}

struct Detection {
  bool alarm = false;
  double score = 0.0;
};

inline Detection detect(const LstmAeModel& m, const Window& w) {
  double s = reconstruction_loss(m, w);
  return {s >= m.tau, s};
}

// JSON weight bundle.
inline nlohmann::json mat_to_json(const Mat& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    std::vector<double> row(a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) row[c] = a(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  const Eigen::Index c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat a(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    require_dims(static_cast<Eigen::Index>(j[i].size()) == c, "ragged matrix in model file");
    for (Eigen::Index k = 0; k < c; ++k) a(i, k) = j[i][k].get<double>();
  }
  return a;
}

inline nlohmann::json model_to_json(const LstmAeModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : m.params.lstm)
    layers.push_back({{"hidden", L.hid}, {"W", mat_to_json(L.w)},
                      {"U", mat_to_json(L.u)}, {"b", mat_to_json(L.b)}});
  nlohmann::json tau = std::isfinite(m.tau) ? nlohmann::json(m.tau) : nlohmann::json(nullptr);
  return {{"version", LstmAeModel::kFormatVersion},
          {"input_dim", m.input_dim},
          {"widths", m.encoder_widths},
          {"T", m.window},
          {"norm", {{"mean", to_std(m.norm.mean)}, {"scale", to_std(m.norm.scale)}}},
          {"weights",
           {{"lstm", layers},
            {"dense", {{"W", mat_to_json(m.params.dense_w)},
                       {"b", mat_to_json(m.params.dense_b)}}}}},
          {"tau_lstm", tau},
          {"decoder_bypass", m.decoder_bypass}};
}

inline LstmAeModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != LstmAeModel::kFormatVersion)
      throw ModelError("unsupported detector model version");
    LstmAeModel m;
    m.input_dim = j.at("input_dim").get<int>();
    m.window = j.at("T").get<int>();
    m.encoder_widths = j.at("widths").get<std::vector<int>>();
    m.norm.mean = from_std(j.at("norm").at("mean").get<std::vector<double>>());
    m.norm.scale = from_std(j.at("norm").at("scale").get<std::vector<double>>());
    if ((m.norm.scale.array() <= 0.0).any())
      throw ModelError("normalization scales must be positive");
    for (const auto& jl : j.at("weights").at("lstm")) {
      LstmParams<Mat> L;
      L.hid = jl.at("hidden").get<int>();
      L.w = mat_from_json(jl.at("W"));
      L.u = mat_from_json(jl.at("U"));
      L.b = mat_from_json(jl.at("b"));
      m.params.lstm.push_back(std::move(L));
    }
    m.params.dense_w = mat_from_json(j.at("weights").at("dense").at("W"));
    m.params.dense_b = mat_from_json(j.at("weights").at("dense").at("b"));
    m.tau = j.at("tau_lstm").is_null() ? std::numeric_limits<double>::infinity()
                                       : j.at("tau_lstm").get<double>();
    m.decoder_bypass = j.value("decoder_bypass", false);
    if (m.window < 2) throw ModelError("window length must be at least 2");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed detector model: ") + e.what());
  }
}

}  // namespace fdimtd

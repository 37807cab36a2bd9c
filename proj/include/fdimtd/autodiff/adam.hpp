// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "fdimtd/core.hpp"

namespace fdimtd::ad {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<Mat*>& params, AdamConfig cfg) : cfg_(cfg) {
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }

  // One bias-corrected Adam update in place.
  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
    require_dims(params.size() == m_.size() && grads.size() == m_.size(),
                 "adam: parameter count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < m_.size(); ++k) {
      require_dims(grads[k].rows() == m_[k].rows() &&
                       grads[k].cols() == m_[k].cols() &&
                       params[k]->rows() == m_[k].rows() &&
                       params[k]->cols() == m_[k].cols(),
                   "adam: shape mismatch");
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * grads[k];
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * grads[k].cwiseAbs2();
      params[k]->array() -= cfg_.lr * (m_[k].array() / c1) /
                            ((v_[k].array() / c2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

inline void adam_step(AdamState& state, const std::vector<Mat*>& params,
                      const std::vector<Mat>& grads) {
  state.step(params, grads);
}

}  // namespace fdimtd::ad

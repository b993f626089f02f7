// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace trnk {

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor& p : params) {
      for (double& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void Sgd::step() {
  for (Tensor& p : params_) {
    auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
  }
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  if (!(opts_.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      w[i] -= opts_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

ParameterAverage::ParameterAverage(std::vector<Tensor> params) : params_(std::move(params)) {
  for (const Tensor& p : params_) sum_.emplace_back(p.size(), 0.0);
}

void ParameterAverage::accumulate() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) sum_[k][i] += w[i];
  }
  ++count_;
}

void ParameterAverage::swap() {
  if (count_ == 0) return;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double mean = sum_[k][i] * inv;
      sum_[k][i] = w[i] * static_cast<double>(count_);
      w[i] = mean;
    }
  }
}

}  // namespace trnk

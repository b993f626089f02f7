// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "trnk/numerics.hpp"

namespace trnk {

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {}
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  double lr_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts = {});
  void step();
  void zero_grad();
  double learning_rate() const { return opts_.lr; }
  void set_learning_rate(double lr) { opts_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Running mean of parameter values (Polyak averaging).
class ParameterAverage {
 public:
  explicit ParameterAverage(std::vector<Tensor> params);
  void accumulate();
  std::size_t count() const { return count_; }
  /// Swaps live values with the average; calling twice restores them.
  void swap();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> sum_;
  std::size_t count_ = 0;
};

}  // namespace trnk

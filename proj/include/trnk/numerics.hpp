// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Dense float64 tensors with a dynamically recorded graph for reverse-mode
// gradients, plus the numerical-verification helpers used across the toolkit.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trnk {

using Shape = std::vector<std::size_t>;

/// Large negative stand-in for log(0). Finite so arithmetic never yields NaN.
inline constexpr double kLogZero = -1.0e30;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Seeded generator threaded explicitly through every stochastic operation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  /// Uniform integer in the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

namespace detail {
struct Node;
}

/// Handle to a tensor node. Copies share the underlying storage and graph
/// position; values are immutable once produced by an op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Trainable leaf initialised uniformly in [lo, hi].
  static Tensor parameter(Shape shape, Rng& rng, double lo = -0.1, double hi = 0.1);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const;
  /// Writable view; only leaves may be mutated (optimizers, grad checks).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// Gradient buffer; empty until a backward pass reaches this node.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Propagates d(this)/d(leaf) into every reachable leaf. Scalar only.
  void backward() const;
  /// Same values, no graph history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node; accumulates into parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Scalar helpers.
double log_sum_exp(std::span<const double> values);
double log_add(double a, double b);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise suite.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a (n x m) plus a bias row broadcast over all n rows; bias has m elements.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor dropout(const Tensor& a, double p, bool train_mode, Rng& rng);

// Reductions and normalisation.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Axis 0 or 1 of a matrix; a 1-D tensor is treated as a single row (axis 0).
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Structural ops on matrices.
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// Rows of `table` selected by index; used for embeddings.
Tensor gather_rows(const Tensor& table, std::span<const int> indices);
/// out[t * U + u] = a[t] + b[u] for a (T x J), b (U x J).
Tensor pair_add(const Tensor& a, const Tensor& b);

// Convolution on (channels, height, width) volumes.
/// Stride 1, zero "same" padding; weight (Cout, Cin, k, k) with odd k; bias (Cout).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// 2x2 max pooling, stride 2, partial windows kept (output ceil(H/2) x ceil(W/2)).
Tensor max_pool2x2(const Tensor& x);
/// (C, T, F) volume to a (T, C * F) frame matrix.
Tensor channels_to_frames(const Tensor& x);

/// Scalar node whose value and input-gradient were computed externally
/// (lattice losses). `grad` has the same layout as `input`.
Tensor attach_scalar(const Tensor& input, double value, std::vector<double> grad);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t parameter_count = 0;
};

/// Compares propagated gradients with central finite differences for every
/// coordinate of `params`. Relative errors use max(|analytic|, |numeric|, 1e-3)
/// as denominator so vanishing gradients are judged absolutely.
GradCheckReport check_gradients(const std::function<Tensor()>& f, std::span<Tensor> params,
                                double epsilon = 1e-5);

}  // namespace trnk

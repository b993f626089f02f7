// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace trnk {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Builds the output node. The backward closure is only kept when some input
// participates in gradient propagation.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  check_finite(value, op);
  if (shape_size(shape) != value.size()) throw std::logic_error(std::string(op) + ": shape/data mismatch");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_matrix(const Tensor& a, const char* op) {
  if (!a.defined() || a.ndim() != 2) throw ShapeError(std::string(op) + ": expected a matrix");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// c[m x n] (+)= op(a) * op(b) with row-major storage.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // a stored k x m
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // b stored n x k
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        c[i * n + j] += acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
    }
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, const char* op, Forward fwd, Derivative deriv) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  NodePtr pa = a.node_ptr();
  return make_result(a.shape(), std::move(out), op, {pa}, [pa, deriv](Node& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(pa->value[i], self.value[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Rng

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(engine_);
}

// ---------------------------------------------------------------------------
// Tensor

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
  }
  if (shape.empty()) throw ShapeError("tensor needs at least one axis");
  if (shape_size(shape) != values.size()) {
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape));
  }
  check_finite(values, "Tensor::from");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  Tensor t = from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range");
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->parents.empty()) throw std::logic_error("only leaf tensors are mutable");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * node_->shape.back() + c];
}

std::vector<double> Tensor::to_vector() const { return node_->value; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar output");
  if (!node_->requires_grad) return;

  // Reverse topological order via iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n != node_.get()) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Scalar helpers

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("log_sum_exp of empty sequence");
  if (values.size() == 1) return values[0];
  const double m = *std::max_element(values.begin(), values.end());
  if (m <= kLogZero) return kLogZero;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents disagree " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  NodePtr pa = a.node_ptr(), pb = b.node_ptr();
  return make_result({m, n}, std::move(out), "matmul", {pa, pb}, [pa, pb, m, k, n](Node& self) {
    if (pa->requires_grad) {
      gemm(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k, false, true);
    }
    if (pb->requires_grad) {
      gemm(pa->value.data(), self.grad.data(), pb->grad_buffer().data(), k, m, n, true, false);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  NodePtr pa = a.node_ptr();
  return make_result({c, r}, std::move(out), "transpose", {pa}, [pa, r, c](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  NodePtr pa = a.node_ptr(), pb = b.node_ptr();
  return make_result(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb](Node& self) {
    for (Node* p : {pa.get(), pb.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  NodePtr pa = a.node_ptr(), pb = b.node_ptr();
  return make_result(a.shape(), std::move(out), "sub", {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  NodePtr pa = a.node_ptr(), pb = b.node_ptr();
  return make_result(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t m = a.shape().back();
  if (bias.size() != m) throw ShapeError("add_bias: bias length does not match row width");
  const std::size_t n = a.size() / m;
  std::vector<double> out(a.size());
  auto x = a.data(), b = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] + b[j];
  NodePtr pa = a.node_ptr(), pb = bias.node_ptr();
  return make_result(a.shape(), std::move(out), "add_bias", {pa, pb}, [pa, pb, n, m](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    }
  });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& a, double p, bool train_mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!train_mode || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mul(a, Tensor::from(a.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  auto x = a.data();
  const double s = std::accumulate(x.begin(), x.end(), 0.0);
  NodePtr pa = a.node_ptr();
  return make_result({1}, {s}, "sum", {pa}, [pa](Node& self) {
    auto& g = pa->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  std::size_t rows = 1, cols = s[0];
  if (s.size() == 2) {
    rows = s[0];
    cols = s[1];
  } else if (s.size() != 1) {
    throw ShapeError("log_softmax: expected vector or matrix");
  }
  if (s.size() == 1 && axis != 0) throw ShapeError("log_softmax: axis out of range");
  if (s.size() == 2 && axis > 1) throw ShapeError("log_softmax: axis out of range");
  const bool along_cols = (s.size() == 1) || axis == 1;
  // Index math: slice i, element j.
  const std::size_t slices = along_cols ? rows : cols;
  const std::size_t len = along_cols ? cols : rows;
  const std::size_t stride = along_cols ? 1 : cols;
  auto at = [&](std::size_t i, std::size_t j) { return along_cols ? i * cols + j : j * cols + i; };

  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < slices; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) m = std::max(m, in[at(i, j)]);
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) acc += std::exp(in[at(i, j)] - m);
    const double lse = m + std::log(acc);
    for (std::size_t j = 0; j < len; ++j) out[at(i, j)] = in[at(i, j)] - lse;
  }
  (void)stride;
  NodePtr px = x.node_ptr();
  return make_result(s, std::move(out), "log_softmax", {px},
                     [px, slices, len, along_cols, cols](Node& self) {
                       auto idx = [&](std::size_t i, std::size_t j) {
                         return along_cols ? i * cols + j : j * cols + i;
                       };
                       auto& g = px->grad_buffer();
                       for (std::size_t i = 0; i < slices; ++i) {
                         double gs = 0.0;
                         for (std::size_t j = 0; j < len; ++j) gs += self.grad[idx(i, j)];
                         for (std::size_t j = 0; j < len; ++j) {
                           const std::size_t k = idx(i, j);
                           g[k] += self.grad[k] - std::exp(self.value[k]) * gs;
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  Tensor ls = log_softmax(x, axis);
  return unary(
      ls, "softmax", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) throw ShapeError("layer_norm: parameter width");
  auto in = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[i * d + j] - mu) * (in[i * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (in[i * d + j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  NodePtr px = x.node_ptr(), pg = gain.node_ptr(), pb = bias.node_ptr();
  return make_result(
      x.shape(), std::move(out), "layer_norm", {px, pg, pb},
      [px, pg, pb, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        if (pg->requires_grad) {
          auto& g = pg->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
        if (px->requires_grad) {
          auto& g = px->grad_buffer();
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = self.grad[i * d + j] * pg->value[j];
              s1 += gh;
              s2 += gh * xhat[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = self.grad[i * d + j] * pg->value[j];
              g[i * d + j] += inv_std[i] * (gh - s1 / dd - xhat[i * d + j] * s2 / dd);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Structural

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw ShapeError("reshape: element count differs");
  NodePtr pa = a.node_ptr();
  return make_result(std::move(shape), a.to_vector(), "reshape", {pa}, [pa](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  if (begin >= end || end > a.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t c = a.cols();
  auto in = a.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          in.begin() + static_cast<std::ptrdiff_t>(end * c));
  NodePtr pa = a.node_ptr();
  return make_result({end - begin, c}, std::move(out), "slice_rows", {pa},
                     [pa, begin, c](Node& self) {
                       auto& g = pa->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  if (begin >= end || end > a.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  auto in = a.data();
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = in[i * c + begin + j];
  NodePtr pa = a.node_ptr();
  return make_result({r, w}, std::move(out), "slice_cols", {pa}, [pa, r, c, w, begin](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to join");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    r += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node_ptr());
  }
  auto ps = parents;
  return make_result({r, c}, std::move(out), "concat_rows", std::move(parents), [ps](Node& self) {
    std::size_t offset = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to join");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    c += p.cols();
    widths.push_back(p.cols());
    parents.push_back(p.node_ptr());
  }
  std::vector<double> out(r * c);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    auto in = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + off + j] = in[i * w + j];
    off += w;
  }
  auto ps = parents;
  return make_result({r, c}, std::move(out), "concat_cols", std::move(parents),
                     [ps, widths, r, c](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ps.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (ps[k]->requires_grad) {
                           auto& g = ps[k]->grad_buffer();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + off + j];
                         }
                         off += w;
                       }
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const int> indices) {
  require_matrix(table, "gather_rows");
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  const std::size_t c = table.cols();
  auto in = table.data();
  std::vector<double> out(indices.size() * c);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= table.rows()) {
      throw ShapeError("gather_rows: index out of range");
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  NodePtr pt = table.node_ptr();
  Shape shape{idx.size(), c};
  return make_result(std::move(shape), std::move(out), "gather_rows", {pt},
                     [pt, idx = std::move(idx), c](Node& self) {
                       auto& g = pt->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
                     });
}

Tensor pair_add(const Tensor& a, const Tensor& b) {
  require_matrix(a, "pair_add");
  require_matrix(b, "pair_add");
  if (a.cols() != b.cols()) throw ShapeError("pair_add: width mismatch");
  const std::size_t T = a.rows(), U = b.rows(), J = a.cols();
  auto x = a.data(), y = b.data();
  std::vector<double> out(T * U * J);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t j = 0; j < J; ++j) out[(t * U + u) * J + j] = x[t * J + j] + y[u * J + j];
  NodePtr pa = a.node_ptr(), pb = b.node_ptr();
  return make_result({T * U, J}, std::move(out), "pair_add", {pa, pb}, [pa, pb, T, U, J](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < U; ++u)
          for (std::size_t j = 0; j < J; ++j) g[t * J + j] += self.grad[(t * U + u) * J + j];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < U; ++u)
          for (std::size_t j = 0; j < J; ++j) g[u * J + j] += self.grad[(t * U + u) * J + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 3 || weight.ndim() != 4) throw ShapeError("conv2d: expected (C,H,W) and (O,C,k,k)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C) throw ShapeError("conv2d: input channel mismatch");
  if (weight.dim(3) != K || K % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.size() != O) throw ShapeError("conv2d: bias length");
  const long pad = static_cast<long>(K / 2);
  auto in = x.data(), w = weight.data(), b = bias.data();
  std::vector<double> out(O * H * W);
  for (std::size_t o = 0; o < O; ++o) {
    double* oplane = out.data() + o * H * W;
    std::fill(oplane, oplane + H * W, b[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* iplane = in.data() + c * H * W;
      for (std::size_t ki = 0; ki < K; ++ki) {
        for (std::size_t kj = 0; kj < K; ++kj) {
          const double wv = w[((o * C + c) * K + ki) * K + kj];
          if (wv == 0.0) continue;
          const long di = static_cast<long>(ki) - pad, dj = static_cast<long>(kj) - pad;
          for (std::size_t i = 0; i < H; ++i) {
            const long si = static_cast<long>(i) + di;
            if (si < 0 || si >= static_cast<long>(H)) continue;
            const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -dj));
            const std::size_t j1 = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dj));
            const double* irow = iplane + si * static_cast<long>(W) + dj;
            double* orow = oplane + i * W;
            for (std::size_t j = j0; j < j1; ++j) orow[j] += wv * irow[j];
          }
        }
      }
    }
  }
  NodePtr px = x.node_ptr(), pw = weight.node_ptr(), pb = bias.node_ptr();
  return make_result({O, H, W}, std::move(out), "conv2d", {px, pw, pb},
                     [px, pw, pb, C, H, W, O, K, pad](Node& self) {
                       const double* go = self.grad.data();
                       if (pb->requires_grad) {
                         auto& g = pb->grad_buffer();
                         for (std::size_t o = 0; o < O; ++o)
                           for (std::size_t p = 0; p < H * W; ++p) g[o] += go[o * H * W + p];
                       }
                       double* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
                       double* gw = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
                       const double* in = px->value.data();
                       const double* w = pw->value.data();
                       for (std::size_t o = 0; o < O; ++o) {
                         const double* gplane = go + o * H * W;
                         for (std::size_t c = 0; c < C; ++c) {
                           const double* iplane = in + c * H * W;
                           for (std::size_t ki = 0; ki < K; ++ki) {
                             for (std::size_t kj = 0; kj < K; ++kj) {
                               const std::size_t widx = ((o * C + c) * K + ki) * K + kj;
                               const long di = static_cast<long>(ki) - pad, dj = static_cast<long>(kj) - pad;
                               double acc = 0.0;
                               for (std::size_t i = 0; i < H; ++i) {
                                 const long si = static_cast<long>(i) + di;
                                 if (si < 0 || si >= static_cast<long>(H)) continue;
                                 const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -dj));
                                 const std::size_t j1 = static_cast<std::size_t>(
                                     std::min(static_cast<long>(W), static_cast<long>(W) - dj));
                                 const long ioff = si * static_cast<long>(W) + dj;
                                 const double* grow = gplane + i * W;
                                 if (gw) {
                                   for (std::size_t j = j0; j < j1; ++j) acc += grow[j] * iplane[ioff + static_cast<long>(j)];
                                 }
                                 if (gx) {
                                   const double wv = w[widx];
                                   double* gxrow = gx + c * H * W + ioff;
                                   for (std::size_t j = j0; j < j1; ++j) gxrow[j] += wv * grow[j];
                                 }
                               }
                               if (gw) gw[widx] += acc;
                             }
                           }
                         }
                       }
                     });
}

Tensor max_pool2x2(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("max_pool2x2: expected (C,H,W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  auto in = x.data();
  std::vector<double> out(C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        std::size_t best = c * H * W + (2 * i) * W + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t si = 2 * i + di, sj = 2 * j + dj;
            if (si >= H || sj >= W) continue;
            const std::size_t k = c * H * W + si * W + sj;
            if (in[k] > in[best]) best = k;
          }
        }
        const std::size_t o = (c * Ho + i) * Wo + j;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  NodePtr px = x.node_ptr();
  return make_result({C, Ho, Wo}, std::move(out), "max_pool2x2", {px},
                     [px, argmax = std::move(argmax)](Node& self) {
                       auto& g = px->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                     });
}

Tensor channels_to_frames(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("channels_to_frames: expected (C,T,F)");
  const std::size_t C = x.dim(0), T = x.dim(1), F = x.dim(2);
  auto in = x.data();
  std::vector<double> out(T * C * F);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) out[t * C * F + c * F + f] = in[(c * T + t) * F + f];
  NodePtr px = x.node_ptr();
  return make_result({T, C * F}, std::move(out), "channels_to_frames", {px}, [px, C, T, F](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t f = 0; f < F; ++f) g[(c * T + t) * F + f] += self.grad[t * C * F + c * F + f];
  });
}

Tensor attach_scalar(const Tensor& input, double value, std::vector<double> grad) {
  if (grad.size() != input.size()) throw ShapeError("attach_scalar: gradient layout mismatch");
  NodePtr pi = input.node_ptr();
  return make_result({1}, {value}, "attach_scalar", {pi}, [pi, grad = std::move(grad)](Node& self) {
    auto& g = pi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport check_gradients(const std::function<Tensor()>& f, std::span<Tensor> params,
                                double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("check_gradients: epsilon must be positive");
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError("check_gradients: non-finite objective");
  out.backward();

  GradCheckReport report;
  NoGradGuard no_grad;
  for (Tensor& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = f().item();
      values[i] = saved - epsilon;
      const double down = f().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("check_gradients: non-finite objective at perturbed point");
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
      ++report.parameter_count;
    }
  }
  return report;
}

}  // namespace trnk

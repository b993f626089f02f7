// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace trnk {

namespace {

// Row-wise log-softmax of a (rows x V) buffer.
std::vector<double> normalise_rows(std::span<const double> logits, std::size_t rows, std::size_t V) {
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * V;
    const double m = *std::max_element(z, z + V);
    double acc = 0.0;
    for (std::size_t k = 0; k < V; ++k) acc += std::exp(z[k] - m);
    const double lse = m + std::log(acc);
    for (std::size_t k = 0; k < V; ++k) out[r * V + k] = z[k] - lse;
  }
  return out;
}

void check_labels(std::span<const int> target, std::size_t V, int blank) {
  for (int y : target) {
    if (y < 0 || static_cast<std::size_t>(y) >= V) throw std::out_of_range("target label out of range");
    if (y == blank) throw std::invalid_argument("target sequence contains the blank label");
  }
}

// Converts d loss / d log_probs into d loss / d logits through log-softmax.
std::vector<double> through_log_softmax(const std::vector<double>& dlp, const std::vector<double>& lp,
                                        std::size_t rows, std::size_t V) {
  std::vector<double> g(dlp.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += dlp[r * V + k];
    for (std::size_t k = 0; k < V; ++k) g[r * V + k] = dlp[r * V + k] - std::exp(lp[r * V + k]) * s;
  }
  return g;
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) need += (target[i] == target[i - 1]) ? 1 : 0;
  return need;
}

}  // namespace

// ---------------------------------------------------------------------------
// CTC

AlignmentLattice ctc_lattice(const Tensor& logits, std::span<const int> target, int blank) {
  if (logits.ndim() != 2) throw ShapeError("ctc: logits must be T x V");
  const std::size_t T = logits.rows(), V = logits.cols();
  check_labels(target, V, blank);
  if (T < ctc_min_frames(target)) {
    throw InfeasibleTarget("ctc: " + std::to_string(T) + " frames cannot emit " +
                           std::to_string(target.size()) + " labels");
  }
  const std::size_t S = 2 * target.size() + 1;
  std::vector<int> ext(S, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];

  AlignmentLattice lat;
  lat.time_steps = T;
  lat.positions = S;
  lat.log_probs = normalise_rows(logits.data(), T, V);
  lat.alpha.assign(T * S, kLogZero);
  lat.beta.assign(T * S, kLogZero);
  auto lp = [&](std::size_t t, std::size_t s) { return lat.log_probs[t * V + ext[s]]; };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  auto& a = lat.alpha;
  a[0] = lp(0, 0);
  if (S > 1) a[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double v = a[(t - 1) * S + s];
      if (s >= 1) v = log_add(v, a[(t - 1) * S + s - 1]);
      if (can_skip(s)) v = log_add(v, a[(t - 1) * S + s - 2]);
      a[t * S + s] = v <= kLogZero ? kLogZero : v + lp(t, s);
    }
  }
  lat.forward_log_likelihood =
      S > 1 ? log_add(a[(T - 1) * S + S - 1], a[(T - 1) * S + S - 2]) : a[(T - 1) * S];

  auto& b = lat.beta;
  b[(T - 1) * S + S - 1] = lp(T - 1, S - 1);
  if (S > 1) b[(T - 1) * S + S - 2] = lp(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double v = b[(t + 1) * S + s];
      if (s + 1 < S) v = log_add(v, b[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(s + 2)) v = log_add(v, b[(t + 1) * S + s + 2]);
      b[t * S + s] = v <= kLogZero ? kLogZero : v + lp(t, s);
    }
  }
  lat.backward_log_likelihood = S > 1 ? log_add(b[0], b[1]) : b[0];
  return lat;
}

LossResult ctc_loss(const Tensor& logits, std::span<const int> target, int blank) {
  const AlignmentLattice lat = ctc_lattice(logits, target, blank);
  const std::size_t T = lat.time_steps, S = lat.positions, V = logits.cols();
  const double ll = lat.forward_log_likelihood;
  if (ll <= kLogZero) throw InfeasibleTarget("ctc: target has zero probability");

  // d loss / d logits = softmax - occupancy of each label.
  LossResult r;
  r.loss = -ll;
  r.grad.resize(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < V; ++k) r.grad[t * V + k] = std::exp(lat.log_probs[t * V + k]);
    for (std::size_t s = 0; s < S; ++s) {
      const int label = (s % 2 == 0) ? blank : target[s / 2];
      const double occ = lat.alpha_at(t, s) + lat.beta_at(t, s) - lat.log_probs[t * V + label] - ll;
      if (occ > kLogZero / 2) r.grad[t * V + label] -= std::exp(occ);
    }
  }
  return r;
}

Tensor ctc_loss_node(const Tensor& logits, std::span<const int> target, int blank) {
  LossResult r = ctc_loss(logits, target, blank);
  return attach_scalar(logits, r.loss, std::move(r.grad));
}

// ---------------------------------------------------------------------------
// Transducer

AlignmentLattice transducer_lattice(const Tensor& logits, std::size_t time_steps,
                                    std::span<const int> target, int blank) {
  const std::size_t U1 = target.size() + 1;
  std::size_t V = 0;
  if (logits.ndim() == 3) {
    if (logits.dim(0) != time_steps || logits.dim(1) != U1) throw ShapeError("transducer: lattice extents");
    V = logits.dim(2);
  } else if (logits.ndim() == 2) {
    if (logits.rows() != time_steps * U1) throw ShapeError("transducer: lattice rows != T' * (U+1)");
    V = logits.cols();
  } else {
    throw ShapeError("transducer: logits must be a lattice");
  }
  if (time_steps == 0) throw ShapeError("transducer: empty lattice");
  check_labels(target, V, blank);

  const std::size_t T = time_steps;
  AlignmentLattice lat;
  lat.time_steps = T;
  lat.positions = U1;
  lat.log_probs = normalise_rows(logits.data(), T * U1, V);
  auto blank_lp = [&](std::size_t t, std::size_t u) { return lat.log_probs[(t * U1 + u) * V + blank]; };
  auto label_lp = [&](std::size_t t, std::size_t u) {
    return lat.log_probs[(t * U1 + u) * V + target[u]];
  };

  auto& a = lat.alpha;
  a.assign(T * U1, kLogZero);
  a[0] = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      if (t == 0 && u == 0) continue;
      double v = kLogZero;
      if (t > 0) v = a[(t - 1) * U1 + u] + blank_lp(t - 1, u);
      if (u > 0) v = log_add(v, a[t * U1 + u - 1] + label_lp(t, u - 1));
      a[t * U1 + u] = std::max(v, kLogZero);
    }
  }
  lat.forward_log_likelihood = a[(T - 1) * U1 + U1 - 1] + blank_lp(T - 1, U1 - 1);

  auto& b = lat.beta;
  b.assign(T * U1, kLogZero);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U1; u-- > 0;) {
      if (t == T - 1 && u == U1 - 1) {
        b[t * U1 + u] = blank_lp(t, u);
        continue;
      }
      double v = kLogZero;
      if (t + 1 < T) v = b[(t + 1) * U1 + u] + blank_lp(t, u);
      if (u + 1 < U1) v = log_add(v, b[t * U1 + u + 1] + label_lp(t, u));
      b[t * U1 + u] = std::max(v, kLogZero);
    }
  }
  lat.backward_log_likelihood = b[0];
  return lat;
}

LossResult transducer_loss(const Tensor& logits, std::size_t time_steps,
                           std::span<const int> target, int blank) {
  const AlignmentLattice lat = transducer_lattice(logits, time_steps, target, blank);
  const std::size_t T = lat.time_steps, U1 = lat.positions;
  const std::size_t V = lat.log_probs.size() / (T * U1);
  const double ll = lat.forward_log_likelihood;

  // d loss / d log_probs, non-zero only on the blank and next-label entries.
  std::vector<double> dlp(lat.log_probs.size(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      const std::size_t node = (t * U1 + u) * V;
      const double a = lat.alpha_at(t, u);
      if (t + 1 < T) {
        dlp[node + blank] = -std::exp(a + lat.log_probs[node + blank] + lat.beta_at(t + 1, u) - ll);
      } else if (u + 1 == U1) {
        dlp[node + blank] = -std::exp(a + lat.log_probs[node + blank] - ll);
      }
      if (u + 1 < U1) {
        const int y = target[u];
        dlp[node + y] = -std::exp(a + lat.log_probs[node + y] + lat.beta_at(t, u + 1) - ll);
      }
    }
  }
  LossResult r;
  r.loss = -ll;
  r.grad = through_log_softmax(dlp, lat.log_probs, T * U1, V);
  return r;
}

Tensor transducer_loss_node(const Tensor& logits, std::size_t time_steps,
                            std::span<const int> target, int blank) {
  LossResult r = transducer_loss(logits, time_steps, target, blank);
  return attach_scalar(logits, r.loss, std::move(r.grad));
}

// ---------------------------------------------------------------------------
// Cross entropy and interpolation

LossResult sequence_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.ndim() != 2) throw ShapeError("cross entropy: logits must be U x V");
  const std::size_t U = logits.rows(), V = logits.cols();
  if (targets.size() != U) {
    throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(U) + " rows");
  }
  const std::vector<double> lp = normalise_rows(logits.data(), U, V);
  LossResult r;
  r.grad.resize(U * V);
  const double inv = 1.0 / static_cast<double>(U);
  for (std::size_t u = 0; u < U; ++u) {
    const int y = targets[u];
    if (y < 0 || static_cast<std::size_t>(y) >= V) throw std::out_of_range("cross entropy: target label");
    r.loss -= lp[u * V + y] * inv;
    for (std::size_t k = 0; k < V; ++k) r.grad[u * V + k] = std::exp(lp[u * V + k]) * inv;
    r.grad[u * V + y] -= inv;
  }
  return r;
}

Tensor sequence_cross_entropy_node(const Tensor& logits, std::span<const int> targets) {
  LossResult r = sequence_cross_entropy(logits, targets);
  return attach_scalar(logits, r.loss, std::move(r.grad));
}

double joint_ctc_attention_loss(double ctc_loss_value, double attention_loss_value, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("joint loss weight must be in [0, 1]");
  if (!std::isfinite(ctc_loss_value) || !std::isfinite(attention_loss_value)) {
    throw NumericError("joint loss: component loss is not finite");
  }
  return lambda * ctc_loss_value + (1.0 - lambda) * attention_loss_value;
}

Tensor joint_ctc_attention_loss(const Tensor& ctc_loss_value, const Tensor& attention_loss_value,
                                double lambda) {
  (void)joint_ctc_attention_loss(ctc_loss_value.item(), attention_loss_value.item(), lambda);
  return add(scale(ctc_loss_value, lambda), scale(attention_loss_value, 1.0 - lambda));
}

}  // namespace trnk

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Alignment-lattice objectives (CTC, transducer), the joint CTC-attention
// interpolation and token-level cross entropy. Every loss takes raw logits and
// normalises them internally.

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "trnk/numerics.hpp"

namespace trnk {

/// Raised when no alignment can produce the target (CTC: T < U + repeats).
class InfeasibleTarget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossResult {
  double loss = 0.0;          // negative log-likelihood, >= 0
  std::vector<double> grad;   // d loss / d logits, logits layout
};

/// Forward/backward grids in the log domain. Unreachable cells hold kLogZero.
struct AlignmentLattice {
  std::size_t time_steps = 0;  // T (or T')
  std::size_t positions = 0;   // 2U+1 for CTC, U+1 for the transducer
  std::vector<double> log_probs;  // per-node log-distributions, row-major
  std::vector<double> alpha;      // time_steps x positions
  std::vector<double> beta;       // time_steps x positions
  double forward_log_likelihood = kLogZero;
  double backward_log_likelihood = kLogZero;

  double alpha_at(std::size_t t, std::size_t s) const { return alpha[t * positions + s]; }
  double beta_at(std::size_t t, std::size_t s) const { return beta[t * positions + s]; }
};

// CTC ------------------------------------------------------------------------

/// logits: T x V. Blank is label `blank`; targets must not contain it.
AlignmentLattice ctc_lattice(const Tensor& logits, std::span<const int> target, int blank = 0);
LossResult ctc_loss(const Tensor& logits, std::span<const int> target, int blank = 0);
/// Scalar graph node; gradients flow into `logits`.
Tensor ctc_loss_node(const Tensor& logits, std::span<const int> target, int blank = 0);

// Transducer -------------------------------------------------------------------

/// logits: (T' x (U+1) x V) or the flattened ((T' * (U+1)) x V) form with row
/// t * (U+1) + u. time_steps gives T'.
AlignmentLattice transducer_lattice(const Tensor& logits, std::size_t time_steps,
                                    std::span<const int> target, int blank = 0);
LossResult transducer_loss(const Tensor& logits, std::size_t time_steps,
                           std::span<const int> target, int blank = 0);
Tensor transducer_loss_node(const Tensor& logits, std::size_t time_steps,
                            std::span<const int> target, int blank = 0);

// Attention / LM -------------------------------------------------------------

/// Mean per-token negative log-likelihood of `targets` under logits (U x V).
LossResult sequence_cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor sequence_cross_entropy_node(const Tensor& logits, std::span<const int> targets);

/// lambda * ctc + (1 - lambda) * attention.
double joint_ctc_attention_loss(double ctc_loss_value, double attention_loss_value, double lambda);
Tensor joint_ctc_attention_loss(const Tensor& ctc_loss_value, const Tensor& attention_loss_value,
                                double lambda);

}  // namespace trnk

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "trnk/network.hpp"

namespace trnk {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct BeamConfig {
  std::size_t beam_size = 10;
  double expand_beam = kUnbounded;
  double state_beam = kUnbounded;
  double lm_weight = 0.0;
  std::size_t max_symbols_per_frame = 5;

  void validate() const;
};

struct Hypothesis {
  std::vector<int> labels;  // never contains blank
  double score = 0.0;        // model_score + lm_weight * lm_score
  double model_score = 0.0;  // transducer or attention+CTC score
  double lm_score = 0.0;
};

/// Sorted by score, best first.
using NBestList = std::vector<Hypothesis>;

/// Joint distribution source for transducer search. States are identified by
/// the emitted label prefix, so blank emissions never change them.
class TransducerScorer {
 public:
  virtual ~TransducerScorer() = default;
  virtual std::size_t frames() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual int blank_id() const { return 0; }
  /// A label the search never emits (the predictor start symbol), or -1.
  virtual int reserved_id() const { return -1; }

  /// Counted entry point; returns log P(k | t, prefix) for every k.
  std::vector<double> score(std::size_t t, const std::vector<int>& prefix);
  std::size_t joiner_calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual std::vector<double> joint_log_probs(std::size_t t, const std::vector<int>& prefix) = 0;

 private:
  std::size_t calls_ = 0;
};

/// Next-label distribution of an external LM over the acoustic label ids.
class PrefixScorer {
 public:
  virtual ~PrefixScorer() = default;
  virtual std::vector<double> next_log_probs(const std::vector<int>& prefix) = 0;
  /// Index of the sentence-end event in next_log_probs.
  virtual int end_id() const = 0;
  /// Sum of next-label log-probabilities including the sentence end.
  double sequence_log_prob(const std::vector<int>& labels);
};

/// Adapts a transducer Model and one utterance's encoder output.
class ModelTransducerScorer : public TransducerScorer {
 public:
  ModelTransducerScorer(const Model& model, const EncoderOutput& enc);
  std::size_t frames() const override { return enc_proj_.size(); }
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  int reserved_id() const override { return model_.start_id(); }

 protected:
  std::vector<double> joint_log_probs(std::size_t t, const std::vector<int>& prefix) override;

 private:
  struct Entry {
    PredictorState state;
    std::vector<double> pred_proj;
  };
  const Entry& entry(const std::vector<int>& prefix);

  const Model& model_;
  std::vector<std::vector<double>> enc_proj_;
  std::map<std::vector<int>, Entry> cache_;
};

/// Argmax per step; blank moves to the next frame. After
/// max_symbols_per_frame emissions a frame is closed with blank.
Hypothesis greedy_decode(TransducerScorer& model, std::size_t max_symbols_per_frame = 5);

/// Time-synchronous search. Blank extensions of identical prefixes merge by
/// log-sum-exp; after every expansion the pooled open and closed sets are cut
/// back to beam_size, so beam_size 1 reproduces greedy_decode. The pruning
/// margins in `cfg` are ignored here.
NBestList beam_search(TransducerScorer& model, const BeamConfig& cfg, PrefixScorer* lm = nullptr);

/// beam_search plus state_beam (checked at every pop) and expand_beam
/// (relative to the best log-probability over all labels, blank included).
NBestList improved_beam_search(TransducerScorer& model, const BeamConfig& cfg, PrefixScorer* lm = nullptr);

/// Extends `hyp` by a non-blank label with an optional LM contribution.
Hypothesis shallow_fusion_extend(const Hypothesis& hyp, int label, double transducer_log_prob, double lm_log_prob,
                                 double lm_weight);

/// Re-ranks by model_score + lm_weight * full-sequence LM log-prob.
NBestList nbest_rescore(const NBestList& nbest, PrefixScorer& lm, double lm_weight);

// Attention decoding ----------------------------------------------------------

class AttentionScorer {
 public:
  virtual ~AttentionScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual int end_id() const { return 0; }
  virtual int start_id() const { return static_cast<int>(vocab_size()) - 1; }
  /// Decoder log-distribution after `prefix` (end_id closes the sequence).
  virtual std::vector<double> next_log_probs(const std::vector<int>& prefix) = 0;
  /// T' x V CTC log-posteriors, row-major; empty when unavailable.
  virtual const std::vector<double>& ctc_log_probs() const = 0;
};

class ModelAttentionScorer : public AttentionScorer {
 public:
  /// Throws std::invalid_argument for transducer models.
  ModelAttentionScorer(const Model& model, const EncoderOutput& enc);
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<double> next_log_probs(const std::vector<int>& prefix) override;
  const std::vector<double>& ctc_log_probs() const override { return ctc_; }

 private:
  const Model& model_;
  EncoderOutput enc_;
  std::vector<double> ctc_;
  std::optional<AttentionDecoder::Memory> memory_;
  struct Step {
    std::vector<LstmCarry> carry;  // after consuming start + prefix
    std::vector<double> log_probs;
  };
  const Step& step(const std::vector<int>& prefix);
  std::map<std::vector<int>, Step> steps_;
};

/// Incremental CTC prefix probability (log domain) over one utterance.
class CtcPrefixScorer {
 public:
  CtcPrefixScorer(std::vector<double> log_probs, std::size_t vocab, int blank = 0);

  struct State {
    std::vector<double> r_n;  // prefix ends in its last label at t
    std::vector<double> r_b;  // prefix ends in blank at t
    double prefix_score = 0.0;
  };
  State initial() const;
  /// log P(prefix + c, anything after | x) and the extended state.
  State extend(const State& s, const std::vector<int>& prefix, int c) const;
  /// log P(prefix | x) exactly.
  double full_score(const State& s) const;
  std::size_t frames() const { return T_; }

 private:
  double x(std::size_t t, int k) const { return lp_[t * V_ + static_cast<std::size_t>(k)]; }
  std::vector<double> lp_;
  std::size_t T_, V_;
  int blank_;
};

struct AttentionBeamConfig {
  std::size_t beam_size = 10;
  double ctc_weight = 0.3;
  std::size_t max_length = 0;  // 0: four labels per encoder frame
};

/// Label-synchronous search scoring (1-w)*attention + w*CTC prefix.
NBestList attention_joint_decode(AttentionScorer& model, const AttentionBeamConfig& cfg);

}  // namespace trnk

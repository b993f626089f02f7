// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trnk/checkpoint.hpp"
#include "trnk/decode.hpp"
#include "trnk/network.hpp"

namespace trnk {

/// Character LSTM LM over the acoustic label ids. The start symbol (last id)
/// opens every sentence and also predicts its end.
struct LMConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 1;
  std::size_t units = 64;
  std::size_t embedding_dim = 32;
  double weight_drop = 0.5;
  double input_dropout = 0.1;
  double output_dropout = 0.1;
  bool tie_embeddings = false;

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Starts from `base`; unknown keys throw std::invalid_argument.
  static LMConfig from_key_values(const std::map<std::string, std::string>& kv, LMConfig base);
  static LMConfig from_key_values(const std::map<std::string, std::string>& kv) { return from_key_values(kv, {}); }
  static std::vector<std::string> keys();
};

struct LMState {
  std::vector<LstmCarry> carry;
};

/// Train mode: elementwise keep-prob 1-p mask scaled by 1/(1-p). Eval mode or
/// p = 0: `w` itself.
Tensor weight_drop_apply(const Tensor& w, double p, bool train, Rng& rng);

class CharLm {
 public:
  CharLm() = default;
  CharLm(LMConfig config, std::uint64_t seed);

  const LMConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  int start_id() const { return static_cast<int>(config_.vocab_size) - 1; }
  int end_id() const { return start_id(); }

  LMState initial_state() const;
  /// Logits (U x V) after each input. Weight-drop masks are drawn once per
  /// call and shared by every position.
  Tensor forward(std::span<const int> inputs, const LMState& state, bool train, Rng& rng,
                 LMState* final_state = nullptr) const;
  /// Mean cross entropy of `labels` followed by the end event.
  Tensor sentence_loss(std::span<const int> labels, bool train, Rng& rng) const;
  /// Sum of log-probabilities of `labels` and the end event.
  double sentence_log_prob(std::span<const int> labels) const;

  Checkpoint to_checkpoint() const;
  static CharLm from_checkpoint(const Checkpoint& ckpt);

  Tensor embedding;  // V x E
  std::vector<LstmLayer> layers;
  std::optional<Linear> output;  // untied projection
  Tensor output_bias;             // tied projection bias

 private:
  LMConfig config_;
  ParameterStore params_;
};

/// One eval-mode step: log-distribution over the next label after `label`.
/// Throws std::out_of_range for labels outside the vocabulary.
std::pair<std::vector<double>, LMState> lm_score_step(const CharLm& lm, const LMState& state, int label);

/// exp(mean negative log-likelihood per predicted event, end events included).
double perplexity(const CharLm& lm, const std::vector<std::vector<int>>& sentences);

struct LmTrainOptions {
  std::size_t epochs = 10;
  double learning_rate = 1.0;
  std::size_t bptt = 32;
  double clip = 0.25;
  /// Average weights from this epoch on (0-based); evaluation and the
  /// returned model use the average.
  std::optional<std::size_t> average_from;
  std::uint64_t seed = 1;
};

struct LmTrainResult {
  CharLm lm;
  double initial_perplexity = 0.0;
  std::vector<double> valid_perplexity;  // one per epoch
};

/// Plain SGD with truncated backpropagation over the concatenated, per-epoch
/// shuffled training stream. Throws std::invalid_argument for an empty
/// corpus, std::out_of_range for labels outside the vocabulary.
LmTrainResult train_lm(const std::vector<std::vector<int>>& train, const std::vector<std::vector<int>>& valid,
                       const LMConfig& config, const LmTrainOptions& options,
                       const std::function<void(std::size_t, double)>& on_epoch = {});

/// PrefixScorer view of a CharLm for fusion and rescoring.
class LmPrefixScorer : public PrefixScorer {
 public:
  explicit LmPrefixScorer(const CharLm& lm) : lm_(lm) {}
  std::vector<double> next_log_probs(const std::vector<int>& prefix) override;
  int end_id() const override { return lm_.end_id(); }

 private:
  struct Entry {
    LMState state;
    std::vector<double> log_probs;
  };
  const Entry& entry(const std::vector<int>& prefix);
  const CharLm& lm_;
  std::map<std::vector<int>, Entry> cache_;
};

}  // namespace trnk

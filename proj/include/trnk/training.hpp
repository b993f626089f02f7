// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Acoustic-model training loop and corpus-level decoding.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trnk/corpus.hpp"
#include "trnk/decode.hpp"
#include "trnk/eval.hpp"
#include "trnk/frontend.hpp"
#include "trnk/langmodel.hpp"
#include "trnk/network.hpp"

namespace trnk {

struct Example {
  std::string id;
  FeatureMatrix features;
  std::vector<int> labels;
};

/// Encodes transcripts; units missing from `vocab` raise DataError.
std::vector<Example> make_examples(std::span<const Utterance> utts, const Vocabulary& vocab);

/// Empty when `model` can be trained on `ex`, otherwise the reason. CTC needs
/// one encoder frame per label plus one per adjacent repeat.
std::optional<std::string> untrainable_reason(const Model& model, const Example& ex);

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 1;
  double learning_rate = 1e-3;
  /// Multiplies the learning rate after an epoch without validation gain.
  double lr_decay = 1.0;
  double clip = 5.0;
  std::uint64_t seed = 1;
  std::optional<SpecAugmentPolicy> specaugment;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double learning_rate = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct TrainResult {
  double initial_valid_loss = 0.0;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;  // 0: the initialisation
  Checkpoint best;
  std::size_t skipped_train = 0;
  std::size_t skipped_valid = 0;
};

/// Mean per-utterance loss in eval mode over trainable examples.
double validation_loss(const Model& model, std::span<const Example> examples);

/// Adam with gradient-norm clipping over shuffled mini-batches. `model` ends
/// holding the last epoch's weights; the best validation checkpoint is in the
/// result. Non-finite losses raise NumericError.
TrainResult train_model(Model& model, std::span<const Example> train, std::span<const Example> valid,
                        const TrainOptions& options,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

enum class SearchMode { greedy, beam, improved };

std::string to_string(SearchMode m);
SearchMode parse_search_mode(const std::string& s);

struct DecodeOptions {
  SearchMode mode = SearchMode::beam;
  BeamConfig beam;
  AttentionBeamConfig attention;
  /// Re-rank the final n-best with the LM instead of fusing during search.
  bool rescore = false;
  std::size_t jobs = 1;
};

struct DecodeResult {
  std::string id;
  NBestList nbest;  // best first; a single entry for greedy search
  std::size_t joiner_calls = 0;
};

/// Decodes every utterance; results keep input order. `lm` may be null.
std::vector<DecodeResult> decode_corpus(const Model& model, std::span<const Utterance> utts,
                                        const DecodeOptions& options, const CharLm* lm = nullptr);

/// Runs decode_corpus and scores the best hypotheses against the transcripts.
ScoreReport decode_and_score(const Model& model, std::span<const Utterance> utts, const Vocabulary& vocab,
                             const DecodeOptions& options, ScoreUnit unit, DecodeCost* cost = nullptr,
                             const CharLm* lm = nullptr);

}  // namespace trnk

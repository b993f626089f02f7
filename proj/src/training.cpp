// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "trnk/optim.hpp"

namespace trnk {

namespace {

Tensor feature_tensor(const FeatureMatrix& f) { return Tensor::from({f.num_frames, f.dim}, f.values); }

std::size_t encoder_frames(std::size_t T) { return (T + 3) / 4; }

FeatureMatrix augment(const FeatureMatrix& f, SpecAugmentPolicy p, Rng& rng) {
  // Short utterances get narrower masks rather than an error.
  p.max_time_width = std::min(p.max_time_width, f.num_frames - 1);
  p.max_freq_width = std::min(p.max_freq_width, f.dim - 1);
  return apply_specaugment(f, p, rng);
}

}  // namespace

std::vector<Example> make_examples(std::span<const Utterance> utts, const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(utts.size());
  for (const auto& u : utts) {
    Example ex{u.id, u.features, {}};
    for (const auto& unit : split_units(u.text)) {
      if (!vocab.contains(unit)) throw DataError(u.id + ": unit '" + unit + "' is not in the vocabulary");
      ex.labels.push_back(vocab.id(unit));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::optional<std::string> untrainable_reason(const Model& model, const Example& ex) {
  if (ex.features.dim != model.config().input_dim) {
    return "feature dimension " + std::to_string(ex.features.dim) + " does not match the model's " +
           std::to_string(model.config().input_dim);
  }
  if (ex.features.num_frames < 4) return "fewer than 4 frames";
  if (ex.labels.empty()) return "empty transcript";
  if (is_transducer(model.config().architecture) || model.config().ctc_weight == 0.0) return std::nullopt;
  std::size_t need = ex.labels.size();
  for (std::size_t i = 1; i < ex.labels.size(); ++i) need += ex.labels[i] == ex.labels[i - 1];
  const std::size_t have = encoder_frames(ex.features.num_frames);
  if (have < need) {
    return "CTC needs " + std::to_string(need) + " encoder frames, utterance has " + std::to_string(have);
  }
  return std::nullopt;
}

double validation_loss(const Model& model, std::span<const Example> examples) {
  NoGradGuard guard;
  Rng unused(0);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ex : examples) {
    if (untrainable_reason(model, ex)) continue;
    total += model.loss(feature_tensor(ex.features), ex.labels, false, unused).item();
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no usable validation utterances");
  return total / static_cast<double>(n);
}

TrainResult train_model(Model& model, std::span<const Example> train, std::span<const Example> valid,
                        const TrainOptions& options, const std::function<void(const EpochLog&)>& on_epoch) {
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(options.lr_decay > 0.0 && options.lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  std::vector<std::size_t> usable;
  TrainResult r;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (untrainable_reason(model, train[i])) ++r.skipped_train;
    else usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("no usable training utterances");
  for (const auto& ex : valid) r.skipped_valid += untrainable_reason(model, ex).has_value();
  const auto held_out = valid.empty() ? train : valid;

  r.initial_valid_loss = validation_loss(model, held_out);
  r.best = model.to_checkpoint();
  double best_loss = r.initial_valid_loss;

  auto params = model.parameters().tensors();
  Adam adam(params, AdamOptions{options.learning_rate});
  Rng rng(options.seed);

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = usable.size(); i > 1; --i) {
      std::swap(usable[i - 1], usable[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i)) % i]);
    }
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < usable.size(); b += options.batch_size) {
      const std::size_t end = std::min(usable.size(), b + options.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      adam.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const Example& ex = train[usable[k]];
        const FeatureMatrix f = options.specaugment ? augment(ex.features, *options.specaugment, rng) : ex.features;
        Tensor loss = model.loss(feature_tensor(f), ex.labels, true, rng);
        if (!std::isfinite(loss.item())) throw NumericError(ex.id + ": training loss is not finite");
        epoch_loss += loss.item();
        scale(loss, inv).backward();
      }
      clip_grad_norm(params, options.clip);
      adam.step();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(usable.size());
    log.valid_loss = validation_loss(model, held_out);
    log.learning_rate = adam.learning_rate();
    if (!std::isfinite(log.valid_loss)) throw NumericError("validation loss is not finite");
    if (log.valid_loss < best_loss) {
      best_loss = log.valid_loss;
      r.best_epoch = epoch;
      r.best = model.to_checkpoint();
      log.improved = true;
    } else {
      adam.set_learning_rate(adam.learning_rate() * options.lr_decay);
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return r;
}

std::string to_string(SearchMode m) {
  switch (m) {
    case SearchMode::greedy: return "greedy";
    case SearchMode::beam: return "beam";
    case SearchMode::improved: return "improved";
  }
  return "beam";
}

SearchMode parse_search_mode(const std::string& s) {
  if (s == "greedy") return SearchMode::greedy;
  if (s == "beam") return SearchMode::beam;
  if (s == "improved") return SearchMode::improved;
  throw std::invalid_argument("unknown search mode '" + s + "' (greedy, beam, improved)");
}

namespace {

DecodeResult decode_one(const Model& model, const Utterance& u, const DecodeOptions& o, const CharLm* lm) {
  DecodeResult r{u.id, {}, 0};
  const EncoderOutput enc = model.encode(u.features);
  NoGradGuard guard;
  std::optional<LmPrefixScorer> lm_scorer;
  if (lm) lm_scorer.emplace(*lm);
  if (!is_transducer(model.config().architecture)) {
    ModelAttentionScorer scorer(model, enc);
    AttentionBeamConfig cfg = o.attention;
    if (o.mode == SearchMode::greedy) cfg.beam_size = 1;
    r.nbest = attention_joint_decode(scorer, cfg);
  } else {
    ModelTransducerScorer scorer(model, enc);
    if (o.mode == SearchMode::greedy) {
      r.nbest = {greedy_decode(scorer, o.beam.max_symbols_per_frame)};
    } else {
      PrefixScorer* fused = (lm_scorer && !o.rescore) ? &*lm_scorer : nullptr;
      r.nbest = o.mode == SearchMode::improved ? improved_beam_search(scorer, o.beam, fused)
                                               : beam_search(scorer, o.beam, fused);
    }
    r.joiner_calls = scorer.joiner_calls();
  }
  if (lm_scorer && o.rescore && !r.nbest.empty()) r.nbest = nbest_rescore(r.nbest, *lm_scorer, o.beam.lm_weight);
  return r;
}

}  // namespace

std::vector<DecodeResult> decode_corpus(const Model& model, std::span<const Utterance> utts,
                                        const DecodeOptions& options, const CharLm* lm) {
  options.beam.validate();
  if (lm && lm->config().vocab_size != model.config().vocab_size) {
    throw std::invalid_argument("language model vocabulary size " + std::to_string(lm->config().vocab_size) +
                                " does not match the acoustic model's " + std::to_string(model.config().vocab_size));
  }
  std::vector<DecodeResult> out(utts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < utts.size(); i = next++) {
      try {
        out[i] = decode_one(model, utts[i], options, lm);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, utts.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

ScoreReport decode_and_score(const Model& model, std::span<const Utterance> utts, const Vocabulary& vocab,
                             const DecodeOptions& options, ScoreUnit unit, DecodeCost* cost, const CharLm* lm) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = decode_corpus(model, utts, options, lm);
  std::map<std::string, std::string> refs, hyps;
  std::size_t calls = 0;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    refs[utts[i].id] = utts[i].text;
    hyps[utts[i].id] = results[i].nbest.empty() ? "" : vocab.decode(results[i].nbest.front().labels);
    calls += results[i].joiner_calls;
  }
  if (cost) {
    cost->joiner_calls = calls;
    cost->utterances = utts.size();
    cost->wall_time = std::chrono::steady_clock::now() - start;
  }
  return score_corpus(refs, hyps, unit);
}

}  // namespace trnk

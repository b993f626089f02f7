// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace trnk {

void BeamConfig::validate() const {
  if (beam_size == 0) throw std::invalid_argument("beam_size must be at least 1");
  if (!(expand_beam >= 0.0)) throw std::invalid_argument("expand_beam must be non-negative");
  if (!(state_beam >= 0.0)) throw std::invalid_argument("state_beam must be non-negative");
  if (!(lm_weight >= 0.0) || std::isinf(lm_weight)) throw std::invalid_argument("lm_weight must be finite and >= 0");
  if (max_symbols_per_frame == 0) throw std::invalid_argument("max_symbols_per_frame must be at least 1");
}

std::vector<double> TransducerScorer::score(std::size_t t, const std::vector<int>& prefix) {
  ++calls_;
  return joint_log_probs(t, prefix);
}

double PrefixScorer::sequence_log_prob(const std::vector<int>& labels) {
  std::vector<int> prefix;
  double total = 0.0;
  for (int y : labels) {
    total += next_log_probs(prefix).at(static_cast<std::size_t>(y));
    prefix.push_back(y);
  }
  return total + next_log_probs(prefix).at(static_cast<std::size_t>(end_id()));
}

// ---------------------------------------------------------------------------
// Model adapter

ModelTransducerScorer::ModelTransducerScorer(const Model& model, const EncoderOutput& enc) : model_(model) {
  if (!model.joiner) throw std::invalid_argument("transducer search needs a transducer model");
  NoGradGuard guard;
  const Tensor proj = matmul(enc.states, model.joiner->w_enc);
  for (std::size_t t = 0; t < proj.rows(); ++t) {
    auto row = proj.data().subspan(t * proj.cols(), proj.cols());
    enc_proj_.emplace_back(row.begin(), row.end());
  }
}

const ModelTransducerScorer::Entry& ModelTransducerScorer::entry(const std::vector<int>& prefix) {
  auto it = cache_.find(prefix);
  if (it != cache_.end()) return it->second;
  Entry e;
  if (prefix.empty()) {
    e.state = model_.predictor_initial_state();
  } else {
    const std::vector<int> parent(prefix.begin(), prefix.end() - 1);
    e.state = model_.predictor_step(entry(parent).state, prefix.back());
  }
  e.pred_proj = model_.joiner->project_predictor(e.state.g);
  return cache_.emplace(prefix, std::move(e)).first->second;
}

std::vector<double> ModelTransducerScorer::joint_log_probs(std::size_t t, const std::vector<int>& prefix) {
  return model_.joiner->log_probs(enc_proj_.at(t), entry(prefix).pred_proj);
}

// ---------------------------------------------------------------------------
// Transducer search

namespace {

bool emittable(const TransducerScorer& m, int k) { return k != m.blank_id() && k != m.reserved_id(); }

void refresh(Hypothesis& h, double lm_weight) { h.score = h.model_score + lm_weight * h.lm_score; }

struct Open {
  Hypothesis hyp;
  std::size_t emitted = 0;  // labels emitted in the current frame
};

std::size_t best_index(const std::vector<Open>& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (a[i].hyp.score > a[best].hyp.score) best = i;
  }
  return best;
}

double best_score(const std::vector<Hypothesis>& b) {
  double s = -kUnbounded;
  for (const auto& h : b) s = std::max(s, h.score);
  return s;
}

void merge_closed(std::vector<Hypothesis>& closed, Hypothesis h, double lm_weight) {
  for (auto& c : closed) {
    if (c.labels == h.labels) {
      c.model_score = log_add(c.model_score, h.model_score);
      refresh(c, lm_weight);
      return;
    }
  }
  closed.push_back(std::move(h));
}

// Keeps the `beam` best of closed+open. Ties favour closed entries, then
// earlier insertion, which matches greedy's lowest-index argmax.
void cap_pool(std::vector<Hypothesis>& closed, std::vector<Open>& open, std::size_t beam) {
  if (closed.size() + open.size() <= beam) return;
  struct Ref {
    double score;
    std::size_t order;
  };
  std::vector<Ref> refs;
  for (std::size_t i = 0; i < closed.size(); ++i) refs.push_back({closed[i].score, i});
  for (std::size_t i = 0; i < open.size(); ++i) refs.push_back({open[i].hyp.score, closed.size() + i});
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
  std::vector<bool> keep(refs.size(), false);
  for (std::size_t i = 0; i < beam; ++i) keep[refs[i].order] = true;
  std::vector<Hypothesis> c2;
  std::vector<Open> o2;
  for (std::size_t i = 0; i < closed.size(); ++i)
    if (keep[i]) c2.push_back(std::move(closed[i]));
  for (std::size_t i = 0; i < open.size(); ++i)
    if (keep[closed.size() + i]) o2.push_back(std::move(open[i]));
  closed = std::move(c2);
  open = std::move(o2);
}

NBestList transducer_search(TransducerScorer& model, const BeamConfig& cfg, PrefixScorer* lm, bool pruned) {
  cfg.validate();
  const double beta = cfg.lm_weight;
  const std::size_t V = model.vocab_size();
  const int blank = model.blank_id();
  std::vector<Hypothesis> closed{Hypothesis{}};

  for (std::size_t t = 0; t < model.frames(); ++t) {
    std::vector<Open> open;
    for (auto& h : closed) open.push_back({std::move(h), 0});
    closed.clear();

    while (!open.empty()) {
      const std::size_t bi = best_index(open);
      const double a_best = open[bi].hyp.score;
      if (closed.size() >= cfg.beam_size) {
        std::vector<double> s;
        for (const auto& h : closed) s.push_back(h.score);
        std::nth_element(s.begin(), s.begin() + static_cast<long>(cfg.beam_size - 1), s.end(), std::greater<>());
        if (s[cfg.beam_size - 1] > a_best) break;
      }
      if (pruned && !closed.empty() && a_best < best_score(closed) - cfg.state_beam) break;

      Open y = std::move(open[bi]);
      open.erase(open.begin() + static_cast<long>(bi));
      const std::vector<double> lp = model.score(t, y.hyp.labels);

      Hypothesis stay = y.hyp;
      stay.model_score += lp[static_cast<std::size_t>(blank)];
      refresh(stay, beta);
      merge_closed(closed, std::move(stay), beta);

      if (y.emitted < cfg.max_symbols_per_frame) {
        const double ref = pruned ? *std::max_element(lp.begin(), lp.end()) : 0.0;
        std::vector<double> lm_lp;
        if (lm && beta != 0.0) lm_lp = lm->next_log_probs(y.hyp.labels);
        for (std::size_t k = 0; k < V; ++k) {
          if (!emittable(model, static_cast<int>(k))) continue;
          if (pruned && lp[k] < ref - cfg.expand_beam) continue;
          const double l = lm_lp.empty() ? 0.0 : lm_lp[k];
          open.push_back({shallow_fusion_extend(y.hyp, static_cast<int>(k), lp[k], l, beta), y.emitted + 1});
        }
      }
      cap_pool(closed, open, cfg.beam_size);
    }
  }

  std::stable_sort(closed.begin(), closed.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (closed.size() > cfg.beam_size) closed.resize(cfg.beam_size);
  return closed;
}

}  // namespace

Hypothesis greedy_decode(TransducerScorer& model, std::size_t max_symbols_per_frame) {
  if (max_symbols_per_frame == 0) throw std::invalid_argument("max_symbols_per_frame must be at least 1");
  const int blank = model.blank_id();
  Hypothesis h;
  for (std::size_t t = 0; t < model.frames(); ++t) {
    for (std::size_t emitted = 0;; ++emitted) {
      const auto lp = model.score(t, h.labels);
      int best = blank;
      if (emitted < max_symbols_per_frame) {
        for (std::size_t k = 0; k < lp.size(); ++k) {
          const int ki = static_cast<int>(k);
          if ((ki == blank || emittable(model, ki)) && lp[k] > lp[static_cast<std::size_t>(best)]) best = ki;
        }
      }
      h.model_score += lp[static_cast<std::size_t>(best)];
      if (best == blank) break;
      h.labels.push_back(best);
    }
  }
  h.score = h.model_score;
  return h;
}

NBestList beam_search(TransducerScorer& model, const BeamConfig& cfg, PrefixScorer* lm) {
  return transducer_search(model, cfg, lm, false);
}

NBestList improved_beam_search(TransducerScorer& model, const BeamConfig& cfg, PrefixScorer* lm) {
  return transducer_search(model, cfg, lm, true);
}

Hypothesis shallow_fusion_extend(const Hypothesis& hyp, int label, double transducer_log_prob, double lm_log_prob,
                                 double lm_weight) {
  if (label == 0) throw std::invalid_argument("shallow fusion: blank extensions take no LM score");
  Hypothesis h = hyp;
  h.labels.push_back(label);
  h.model_score += transducer_log_prob;
  if (lm_weight != 0.0) h.lm_score += lm_log_prob;
  refresh(h, lm_weight);
  return h;
}

NBestList nbest_rescore(const NBestList& nbest, PrefixScorer& lm, double lm_weight) {
  if (nbest.empty()) throw std::invalid_argument("nbest_rescore: empty list");
  NBestList out = nbest;
  for (auto& h : out) {
    h.lm_score = lm.sequence_log_prob(h.labels);
    refresh(h, lm_weight);
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return out;
}

// ---------------------------------------------------------------------------
// Attention decoding

ModelAttentionScorer::ModelAttentionScorer(const Model& model, const EncoderOutput& enc) : model_(model), enc_(enc) {
  if (is_transducer(model.config().architecture)) {
    throw std::invalid_argument("attention decoding needs a ctc_attention or transformer model");
  }
  NoGradGuard guard;
  ctc_ = log_softmax(model.ctc_logits(enc), 1).to_vector();
  if (model.attention_decoder) memory_ = model.attention_decoder->prepare(enc.states);
}

std::vector<double> ModelAttentionScorer::next_log_probs(const std::vector<int>& prefix) {
  NoGradGuard guard;
  Rng unused(0);
  if (model_.transformer_decoder) {
    std::vector<int> inputs{model_.start_id()};
    inputs.insert(inputs.end(), prefix.begin(), prefix.end());
    const Tensor logits = model_.transformer_decoder->forward(enc_.states, inputs, false, unused);
    return log_softmax(slice_rows(logits, logits.rows() - 1, logits.rows()), 1).to_vector();
  }
  return step(prefix).log_probs;
}

const ModelAttentionScorer::Step& ModelAttentionScorer::step(const std::vector<int>& prefix) {
  auto it = steps_.find(prefix);
  if (it != steps_.end()) return it->second;
  const auto& dec = *model_.attention_decoder;
  Rng unused(0);
  std::vector<LstmCarry> carry = dec.zero_carry();
  if (!prefix.empty()) carry = step({prefix.begin(), prefix.end() - 1}).carry;
  const int input = prefix.empty() ? model_.start_id() : prefix.back();
  auto r = dec.step(*memory_, carry, input, false, unused);
  Step s{std::move(r.carry), log_softmax(r.logits, 1).to_vector()};
  return steps_.emplace(prefix, std::move(s)).first->second;
}

CtcPrefixScorer::CtcPrefixScorer(std::vector<double> log_probs, std::size_t vocab, int blank)
    : lp_(std::move(log_probs)), T_(vocab == 0 ? 0 : lp_.size() / vocab), V_(vocab), blank_(blank) {
  if (vocab == 0 || lp_.size() % vocab != 0 || T_ == 0) throw ShapeError("ctc prefix scorer: bad posterior matrix");
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  State s;
  s.r_n.assign(T_, kLogZero);
  s.r_b.resize(T_);
  double acc = 0.0;
  for (std::size_t t = 0; t < T_; ++t) {
    acc += x(t, blank_);
    s.r_b[t] = acc;
  }
  s.prefix_score = 0.0;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& g, const std::vector<int>& prefix, int c) const {
  const bool repeat = !prefix.empty() && prefix.back() == c;
  auto phi = [&](std::size_t t) { return repeat ? g.r_b[t] : log_add(g.r_b[t], g.r_n[t]); };
  State h;
  h.r_n.resize(T_);
  h.r_b.resize(T_);
  h.r_n[0] = prefix.empty() ? x(0, c) : kLogZero;
  h.r_b[0] = kLogZero;
  double psi = h.r_n[0];
  for (std::size_t t = 1; t < T_; ++t) {
    const double p = phi(t - 1);
    h.r_n[t] = std::max(log_add(h.r_n[t - 1], p) + x(t, c), kLogZero);
    h.r_b[t] = std::max(log_add(h.r_b[t - 1], h.r_n[t - 1]) + x(t, blank_), kLogZero);
    psi = log_add(psi, std::max(p + x(t, c), kLogZero));
  }
  h.prefix_score = psi;
  return h;
}

double CtcPrefixScorer::full_score(const State& s) const { return log_add(s.r_n[T_ - 1], s.r_b[T_ - 1]); }

NBestList attention_joint_decode(AttentionScorer& model, const AttentionBeamConfig& cfg) {
  if (cfg.beam_size == 0) throw std::invalid_argument("beam_size must be at least 1");
  const double w = cfg.ctc_weight;
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("ctc_weight must be in [0, 1]");
  const std::size_t V = model.vocab_size();
  std::optional<CtcPrefixScorer> ctc;
  if (w > 0.0) {
    if (model.ctc_log_probs().empty()) throw std::invalid_argument("ctc_weight > 0 needs CTC posteriors");
    ctc.emplace(model.ctc_log_probs(), V);
  }
  const std::size_t frames = ctc ? ctc->frames() : 0;
  const std::size_t max_len = cfg.max_length ? cfg.max_length : std::max<std::size_t>(1, 4 * frames);

  struct Active {
    Hypothesis hyp;
    double att = 0.0;
    std::optional<CtcPrefixScorer::State> ctc_state;
  };
  auto fused = [w](double att, double ctc_score) { return (1.0 - w) * att + (w > 0.0 ? w * ctc_score : 0.0); };

  std::vector<Active> beam(1);
  if (ctc) beam[0].ctc_state = ctc->initial();
  NBestList ended;

  for (std::size_t len = 0; len <= max_len && !beam.empty(); ++len) {
    std::vector<Active> next;
    for (const auto& a : beam) {
      const auto lp = model.next_log_probs(a.hyp.labels);
      for (std::size_t k = 0; k < V; ++k) {
        const int ki = static_cast<int>(k);
        if (ki == model.start_id()) continue;
        const double att = a.att + lp[k];
        if (ki == model.end_id()) {
          Hypothesis h = a.hyp;
          h.model_score = fused(att, ctc ? ctc->full_score(*a.ctc_state) : 0.0);
          h.score = h.model_score;
          ended.push_back(std::move(h));
          continue;
        }
        if (len == max_len) continue;
        Active n;
        n.hyp = a.hyp;
        n.hyp.labels.push_back(ki);
        n.att = att;
        if (ctc) n.ctc_state = ctc->extend(*a.ctc_state, a.hyp.labels, ki);
        n.hyp.model_score = fused(att, ctc ? n.ctc_state->prefix_score : 0.0);
        n.hyp.score = n.hyp.model_score;
        next.push_back(std::move(n));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Active& a, const Active& b) { return a.hyp.score > b.hyp.score; });
    if (next.size() > cfg.beam_size) next.resize(cfg.beam_size);
    std::stable_sort(ended.begin(), ended.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    if (ended.size() > cfg.beam_size) ended.resize(cfg.beam_size);
    // Scores never increase along an extension, so nothing open can overtake
    // a full set of finished hypotheses.
    if (ended.size() >= cfg.beam_size && !next.empty() && ended.back().score >= next.front().hyp.score) break;
    beam = std::move(next);
  }
  return ended;
}

}  // namespace trnk

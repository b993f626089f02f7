// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/langmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "trnk/keyvalue.hpp"
#include "trnk/losses.hpp"
#include "trnk/optim.hpp"

namespace trnk {

namespace {

void check_rate(const char* name, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0, 1)");
}

void check_labels(std::span<const int> labels, std::size_t V) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= V) {
      throw std::out_of_range("language model: label " + std::to_string(y) + " outside vocabulary of " +
                              std::to_string(V));
    }
  }
}

}  // namespace

void LMConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("lm: vocab_size must be at least 2");
  if (layers == 0 || units == 0 || embedding_dim == 0) throw std::invalid_argument("lm: sizes must be positive");
  check_rate("lm.weight_drop", weight_drop);
  check_rate("lm.input_dropout", input_dropout);
  check_rate("lm.output_dropout", output_dropout);
}

std::vector<std::pair<std::string, std::string>> LMConfig::to_key_values() const {
  return {
      {"lm.vocab_size", std::to_string(vocab_size)},
      {"lm.layers", std::to_string(layers)},
      {"lm.units", std::to_string(units)},
      {"lm.embedding_dim", std::to_string(embedding_dim)},
      {"lm.weight_drop", format_real(weight_drop)},
      {"lm.input_dropout", format_real(input_dropout)},
      {"lm.output_dropout", format_real(output_dropout)},
      {"lm.tie_embeddings", tie_embeddings ? "true" : "false"},
  };
}

LMConfig LMConfig::from_key_values(const std::map<std::string, std::string>& kv, LMConfig c) {
  for (const auto& [k, v] : kv) {
    if (k == "lm.vocab_size") c.vocab_size = parse_size(k, v);
    else if (k == "lm.layers") c.layers = parse_size(k, v);
    else if (k == "lm.units") c.units = parse_size(k, v);
    else if (k == "lm.embedding_dim") c.embedding_dim = parse_size(k, v);
    else if (k == "lm.weight_drop") c.weight_drop = parse_real(k, v);
    else if (k == "lm.input_dropout") c.input_dropout = parse_real(k, v);
    else if (k == "lm.output_dropout") c.output_dropout = parse_real(k, v);
    else if (k == "lm.tie_embeddings") c.tie_embeddings = parse_bool(k, v);
    else throw std::invalid_argument("unknown language model key '" + k + "'");
  }
  return c;
}

std::vector<std::string> LMConfig::keys() {
  std::vector<std::string> k;
  for (const auto& kv : LMConfig{}.to_key_values()) k.push_back(kv.first);
  return k;
}

Tensor weight_drop_apply(const Tensor& w, double p, bool train, Rng& rng) {
  check_rate("weight drop", p);
  if (!train || p == 0.0) return w;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(w.size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  return mul(w, Tensor::from(w.shape(), std::move(mask)));
}

CharLm::CharLm(LMConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t V = config_.vocab_size, E = config_.embedding_dim;
  embedding = params_.create("lm.embedding", {V, E}, rng);
  std::size_t in = E;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const bool last = l + 1 == config_.layers;
    const std::size_t H = last && config_.tie_embeddings ? E : config_.units;
    layers.emplace_back(params_, "lm.lstm" + std::to_string(l), in, H, rng);
    in = H;
  }
  // Small output weights and a zero bias start the model near uniform.
  if (config_.tie_embeddings) {
    output_bias = params_.add("lm.output.bias", Tensor::zeros({V}));
  } else {
    output.emplace();
    output->weight = params_.create("lm.output.weight", {in, V}, rng);
    output->bias = params_.add("lm.output.bias", Tensor::zeros({V}));
  }
}

LMState CharLm::initial_state() const {
  LMState s;
  for (const auto& l : layers) s.carry.push_back(l.zero_carry());
  return s;
}

Tensor CharLm::forward(std::span<const int> inputs, const LMState& state, bool train, Rng& rng,
                       LMState* final_state) const {
  check_labels(inputs, config_.vocab_size);
  if (state.carry.size() != layers.size()) throw ShapeError("language model: state has the wrong layer count");
  Tensor x = dropout(gather_rows(embedding, inputs), config_.input_dropout, train, rng);
  LMState out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor w_h = weight_drop_apply(layers[l].w_h, config_.weight_drop, train, rng);
    LstmCarry last;
    x = layers[l].run(x, false, &w_h, &last, &state.carry[l]);
    x = dropout(x, config_.output_dropout, train, rng);
    out.carry.push_back(std::move(last));
  }
  if (final_state) *final_state = std::move(out);
  if (output) return output->forward(x);
  return add_bias(matmul(x, transpose(embedding)), output_bias);
}

Tensor CharLm::sentence_loss(std::span<const int> labels, bool train, Rng& rng) const {
  std::vector<int> inputs{start_id()};
  inputs.insert(inputs.end(), labels.begin(), labels.end());
  std::vector<int> targets(labels.begin(), labels.end());
  targets.push_back(end_id());
  return sequence_cross_entropy_node(forward(inputs, initial_state(), train, rng), targets);
}

double CharLm::sentence_log_prob(std::span<const int> labels) const {
  NoGradGuard guard;
  Rng unused(0);
  const double mean = sentence_loss(labels, false, unused).item();
  return -mean * static_cast<double>(labels.size() + 1);
}

Checkpoint CharLm::to_checkpoint() const {
  Checkpoint ck;
  ck.header.emplace_back("kind", "lm");
  for (auto& kv : config_.to_key_values()) ck.header.push_back(std::move(kv));
  for (const auto& [name, t] : params_.entries()) ck.tensors.emplace_back(name, t.detach());
  return ck;
}

CharLm CharLm::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.has_header("kind") || ckpt.header_value("kind") != "lm") {
    throw std::invalid_argument("checkpoint does not hold a language model");
  }
  std::map<std::string, std::string> kv;
  const auto known = LMConfig::keys();
  for (const auto& [k, v] : ckpt.header) {
    if (std::find(known.begin(), known.end(), k) != known.end()) kv[k] = v;
  }
  CharLm lm(LMConfig::from_key_values(kv), 0);
  lm.params_.assign(ckpt.tensors);
  return lm;
}

std::pair<std::vector<double>, LMState> lm_score_step(const CharLm& lm, const LMState& state, int label) {
  NoGradGuard guard;
  Rng unused(0);
  const int in[1] = {label};
  LMState next;
  Tensor logits = lm.forward(in, state, false, unused, &next);
  return {log_softmax(logits, 1).to_vector(), std::move(next)};
}

double perplexity(const CharLm& lm, const std::vector<std::vector<int>>& sentences) {
  double nll = 0.0;
  std::size_t events = 0;
  for (const auto& s : sentences) {
    nll -= lm.sentence_log_prob(s);
    events += s.size() + 1;
  }
  if (events == 0) throw std::invalid_argument("perplexity of an empty corpus");
  return std::exp(nll / static_cast<double>(events));
}

LmTrainResult train_lm(const std::vector<std::vector<int>>& train, const std::vector<std::vector<int>>& valid,
                       const LMConfig& config, const LmTrainOptions& options,
                       const std::function<void(std::size_t, double)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("language model training corpus is empty");
  if (options.bptt == 0) throw std::invalid_argument("bptt length must be positive");
  for (const auto& s : train) check_labels(s, config.vocab_size);
  for (const auto& s : valid) check_labels(s, config.vocab_size);
  const auto& held_out = valid.empty() ? train : valid;

  LmTrainResult result;
  result.lm = CharLm(config, options.seed);
  CharLm& lm = result.lm;
  result.initial_perplexity = perplexity(lm, held_out);

  auto params = lm.parameters().tensors();
  Sgd sgd(params, options.learning_rate);
  ParameterAverage average(params);
  Rng rng(options.seed ^ 0x1f0e5d9c3b2aULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i)) % i]);
    }
    std::vector<int> stream{lm.start_id()};
    for (std::size_t k : order) {
      stream.insert(stream.end(), train[k].begin(), train[k].end());
      stream.push_back(lm.end_id());
    }
    LMState state = lm.initial_state();
    for (std::size_t pos = 0; pos + 1 < stream.size(); pos += options.bptt) {
      const std::size_t len = std::min(options.bptt, stream.size() - 1 - pos);
      std::span<const int> in(stream.data() + pos, len);
      std::span<const int> tgt(stream.data() + pos + 1, len);
      LMState next;
      sgd.zero_grad();
      Tensor loss = sequence_cross_entropy_node(lm.forward(in, state, true, rng, &next), tgt);
      loss.backward();
      clip_grad_norm(params, options.clip);
      sgd.step();
      if (options.average_from && epoch >= *options.average_from) average.accumulate();
      for (auto& c : next.carry) c = {c.h.detach(), c.c.detach()};
      state = std::move(next);
    }
    const bool averaged = average.count() > 0;
    if (averaged) average.swap();
    result.valid_perplexity.push_back(perplexity(lm, held_out));
    if (averaged && epoch + 1 < options.epochs) average.swap();
    if (on_epoch) on_epoch(epoch, result.valid_perplexity.back());
  }
  return result;
}

std::vector<double> LmPrefixScorer::next_log_probs(const std::vector<int>& prefix) { return entry(prefix).log_probs; }

const LmPrefixScorer::Entry& LmPrefixScorer::entry(const std::vector<int>& prefix) {
  if (auto it = cache_.find(prefix); it != cache_.end()) return it->second;
  const LMState parent = prefix.empty() ? lm_.initial_state() : entry({prefix.begin(), prefix.end() - 1}).state;
  auto [lp, state] = lm_score_step(lm_, parent, prefix.empty() ? lm_.start_id() : prefix.back());
  return cache_.emplace(prefix, Entry{std::move(state), std::move(lp)}).first->second;
}

}  // namespace trnk

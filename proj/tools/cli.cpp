// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "run_config.hpp"
#include "trnk/binary_io.hpp"
#include "trnk/keyvalue.hpp"
#include "trnk/losses.hpp"
#include "trnk/selfcheck.hpp"
#include "trnk/training.hpp"

namespace fs = std::filesystem;

namespace trnk::cli {

namespace {

constexpr const char* kLogEnv = "TRNK_LOG_LEVEL";

// ---------------------------------------------------------------------------
// Shared helpers

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

KeyValues common_defaults() { return {{"seed", "1"}, {"jobs", "1"}}; }

KeyValues specaugment_defaults() {
  const SpecAugmentPolicy p;
  return {{"specaugment.num_freq_masks", std::to_string(p.num_freq_masks)},
          {"specaugment.max_freq_width", std::to_string(p.max_freq_width)},
          {"specaugment.num_time_masks", std::to_string(p.num_time_masks)},
          {"specaugment.max_time_width", std::to_string(p.max_time_width)},
          {"specaugment.mask_value", "zero"}};
}

SpecAugmentPolicy specaugment_policy(const RunConfig& c) {
  SpecAugmentPolicy p;
  p.num_freq_masks = c.size("specaugment.num_freq_masks");
  p.max_freq_width = c.size("specaugment.max_freq_width");
  p.num_time_masks = c.size("specaugment.num_time_masks");
  p.max_time_width = c.size("specaugment.max_time_width");
  const std::string& mv = c.str("specaugment.mask_value");
  if (mv == "zero") p.mask_value = MaskValue::zero;
  else if (mv == "mean") p.mask_value = MaskValue::utterance_mean;
  else throw UsageError("specaugment.mask_value must be zero or mean");
  return p;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first error wins.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

std::uint64_t item_seed(std::uint64_t seed, std::size_t i) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL + i + 1;
  h ^= h >> 31;
  return h * 0xbf58476d1ce4e5b9ULL;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

// Checkpoints carry the unit inventory so decoding cannot pair a model with
// the wrong vocabulary.
constexpr const char* kVocabKey = "vocab";

std::pair<std::string, std::string> vocab_header(const Vocabulary& v) {
  std::vector<std::string> units(v.entries().begin() + 1, v.entries().end() - 1);
  for (const auto& u : units) {
    if (u.find_first_of(" \t\n=") != std::string::npos) throw DataError("unit '" + u + "' cannot be stored in a header");
  }
  return {kVocabKey, join(units, " ")};
}

std::optional<Vocabulary> vocab_from_header(const Checkpoint& ck) {
  if (!ck.has_header(kVocabKey)) return std::nullopt;
  return Vocabulary(split(ck.header_value(kVocabKey), ' '));
}

Vocabulary model_vocabulary(const Checkpoint& ck, const RunConfig& c) {
  std::optional<Vocabulary> v;
  if (!c.str("vocab").empty()) v = Vocabulary::load(c.str("vocab"));
  const auto stored = vocab_from_header(ck);
  if (v && stored && !(*v == *stored)) throw DataError("vocab mismatch: --vocab differs from the checkpoint's vocabulary");
  if (!v) v = stored;
  if (!v) throw UsageError("checkpoint has no vocabulary; pass --vocab");
  return *v;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  }
  return out;
}

/// A data directory's transcripts, or a plain text file with one sentence per line.
std::vector<std::string> read_sentences(const fs::path& path) {
  if (fs::is_directory(path)) {
    std::vector<std::string> out;
    for (auto& [id, text] : read_id_map(path / "text")) out.push_back(text);
    return out;
  }
  return read_lines(path);
}

// ---------------------------------------------------------------------------
// synth

KeyValues synth_defaults(const KeyValues&) {
  const SyntheticSpec s;
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"out", ""},
                     {"synth.alphabet", s.alphabet},
                     {"synth.num_utterances", std::to_string(s.num_utterances)},
                     {"synth.min_length", std::to_string(s.min_length)},
                     {"synth.max_length", std::to_string(s.max_length)},
                     {"synth.min_frames_per_char", std::to_string(s.min_frames_per_char)},
                     {"synth.max_frames_per_char", std::to_string(s.max_frames_per_char)},
                     {"synth.feature_dim", std::to_string(s.feature_dim)},
                     {"synth.template_seed", std::to_string(s.template_seed)},
                     {"synth.noise_sigma", format_real(s.noise_sigma)},
                     {"synth.id_prefix", s.id_prefix}});
  return d;
}

int cmd_synth(const RunConfig& c) {
  SyntheticSpec s;
  s.alphabet = c.str("synth.alphabet");
  s.num_utterances = c.size("synth.num_utterances");
  s.min_length = c.size("synth.min_length");
  s.max_length = c.size("synth.max_length");
  s.min_frames_per_char = c.size("synth.min_frames_per_char");
  s.max_frames_per_char = c.size("synth.max_frames_per_char");
  s.feature_dim = c.size("synth.feature_dim");
  s.template_seed = c.size("synth.template_seed");
  s.sample_seed = c.seed();
  s.noise_sigma = c.real("synth.noise_sigma");
  s.id_prefix = c.str("synth.id_prefix");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path out = c.required("out");
  const auto corpus = generate_synthetic_corpus(s);
  save_feature_corpus(out, corpus.utterances);
  spdlog::info("wrote {} utterances to {}", corpus.utterances.size(), out.string());
  return 0;
}

// ---------------------------------------------------------------------------
// features

KeyValues features_defaults(const KeyValues&) {
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"in", ""}, {"out", ""}, {"kind", "fbank"}, {"cmvn", "false"}, {"specaugment", "false"}});
  const auto sa = specaugment_defaults();
  d.insert(d.end(), sa.begin(), sa.end());
  return d;
}

int cmd_features(const RunConfig& c) {
  const fs::path in = c.required("in"), out = c.required("out");
  FeatureKind kind;
  try {
    kind = parse_feature_kind(c.str("kind"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const bool normalise = c.flag("cmvn");
  std::optional<SpecAugmentPolicy> policy;
  if (c.flag("specaugment")) policy = specaugment_policy(c);

  const DataDir data = load_data_dir(in);
  std::vector<Utterance> utts;
  for (const auto& [id, audio] : data.wav) utts.push_back({id, {}, data.text.at(id)});
  parallel_for(utts.size(), c.jobs(), [&](std::size_t i) {
    FeatureMatrix f = compute_features(read_wav(data.wav.at(utts[i].id)), kind);
    if (normalise) f = cmvn(f);
    if (policy) {
      Rng rng(item_seed(c.seed(), i));
      f = apply_specaugment(f, *policy, rng);
    }
    utts[i].features = std::move(f);
  });
  save_feature_corpus(out, utts);
  spdlog::info("wrote {} {} feature files ({} dims) to {}", utts.size(), to_string(kind),
               utts.empty() ? feature_kind_dim(kind) : utts.front().features.dim, out.string());
  return 0;
}

// ---------------------------------------------------------------------------
// train

std::string lookup(const KeyValues& raw, const std::string& key, const std::string& fallback) {
  std::string v = fallback;
  for (const auto& [k, val] : raw) {
    if (k == key) v = val;
  }
  return v;
}

KeyValues train_defaults(const KeyValues& raw) {
  const std::string preset = lookup(raw, "preset", "toy");
  Architecture arch;
  try {
    arch = parse_architecture(lookup(raw, "architecture", "rnnt"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ModelConfig mc;
  if (preset == "toy") mc = ModelConfig::toy(arch, 0, 0);
  else if (preset == "paper") mc = ModelConfig::paper(arch, 0, 0);
  else throw UsageError("preset must be toy or paper");

  const TrainOptions t;
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"data", ""},
                     {"valid", ""},
                     {"valid_fraction", "0.1"},
                     {"out", ""},
                     {"preset", "toy"},
                     {"vocab", ""},
                     {"vocab.aux_units", join(default_aux_units(), ",")},
                     {"train.epochs", std::to_string(t.epochs)},
                     {"train.batch_size", std::to_string(t.batch_size)},
                     {"train.learning_rate", format_real(t.learning_rate)},
                     {"train.lr_decay", format_real(t.lr_decay)},
                     {"train.clip", format_real(t.clip)},
                     {"train.specaugment", "false"}});
  const auto sa = specaugment_defaults();
  d.insert(d.end(), sa.begin(), sa.end());
  const auto model = mc.to_key_values();
  d.insert(d.end(), model.begin(), model.end());
  return d;
}

ModelConfig model_config(const RunConfig& c, std::size_t data_dim, std::size_t vocab_size) {
  std::map<std::string, std::string> kv;
  for (const auto& k : ModelConfig::keys()) kv[k] = c.str(k);
  ModelConfig mc;
  try {
    mc = ModelConfig::from_key_values(kv, ModelConfig{});
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  // Zero means "take it from the data".
  if (mc.input_dim == 0) mc.input_dim = data_dim;
  if (mc.vocab_size == 0) mc.vocab_size = vocab_size;
  if (mc.input_dim != data_dim) {
    throw UsageError("config/architecture mismatch: input_dim " + std::to_string(mc.input_dim) +
                     " but features have " + std::to_string(data_dim) + " dims");
  }
  if (mc.vocab_size != vocab_size) {
    throw UsageError("config/architecture mismatch: vocab_size " + std::to_string(mc.vocab_size) +
                     " but the vocabulary has " + std::to_string(vocab_size) + " entries");
  }
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config/architecture mismatch: ") + e.what());
  }
  return mc;
}

int cmd_train(const RunConfig& c) {
  const fs::path data = c.required("data"), out = c.required("out");
  std::vector<Utterance> train = load_feature_corpus(data);
  if (train.empty()) throw DataError("no utterances in " + data.string());
  std::vector<Utterance> valid;
  if (!c.str("valid").empty()) {
    valid = load_feature_corpus(c.str("valid"));
  } else {
    const double frac = c.real("valid_fraction");
    if (!(frac > 0.0 && frac < 1.0)) throw UsageError("valid_fraction must be in (0, 1)");
    Rng rng(c.seed());
    for (std::size_t i = train.size(); i > 1; --i) {
      std::swap(train[i - 1], train[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i)) % i]);
    }
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(frac * static_cast<double>(train.size())));
    if (n >= train.size()) throw DataError("too few utterances to hold out a validation split");
    valid.assign(train.end() - static_cast<long>(n), train.end());
    train.resize(train.size() - n);
    spdlog::info("held out {} of {} utterances for validation", n, n + train.size());
  }

  Vocabulary vocab;
  if (!c.str("vocab").empty()) {
    vocab = Vocabulary::load(c.str("vocab"));
  } else {
    std::vector<std::string> texts;
    for (const auto& u : train) texts.push_back(u.text);
    vocab = build_vocabulary(texts, split(c.str("vocab.aux_units"), ','));
  }
  const ModelConfig mc = model_config(c, train.front().features.dim, vocab.size());
  const auto tr = make_examples(train, vocab);
  const auto dv = make_examples(valid, vocab);

  TrainOptions o;
  o.epochs = c.size("train.epochs");
  o.batch_size = c.size("train.batch_size");
  o.learning_rate = c.real("train.learning_rate");
  o.lr_decay = c.real("train.lr_decay");
  o.clip = c.real("train.clip");
  o.seed = c.seed();
  if (c.flag("train.specaugment")) o.specaugment = specaugment_policy(c);
  if (c.jobs() > 1) spdlog::info("training runs on one thread; jobs only affects data loading");

  fs::create_directories(out);
  write_text(out / "config.txt", c.render());
  vocab.save(out / "vocab.txt");
  std::ofstream log(out / "train_log.tsv");
  if (!log) throw DataError("cannot write " + (out / "train_log.tsv").string());
  log << "epoch\ttrain_loss\tvalid_loss\tlearning_rate\timproved\tseconds\n";

  Model model(mc, c.seed());
  spdlog::info("{} model with {} parameters, {} training and {} validation utterances", to_string(mc.architecture),
               model.parameters().num_scalars(), tr.size(), dv.size());
  auto on_epoch = [&](const EpochLog& e) {
    log << e.epoch << '\t' << format_real(e.train_loss) << '\t' << format_real(e.valid_loss) << '\t'
        << format_real(e.learning_rate) << '\t' << (e.improved ? 1 : 0) << '\t' << e.seconds << '\n';
    log.flush();
    spdlog::info("epoch {}: train loss {:.4f}, valid loss {:.4f}{}", e.epoch, e.train_loss, e.valid_loss,
                 e.improved ? " (best)" : "");
  };
  TrainResult r = train_model(model, tr, dv, o, on_epoch);
  if (r.skipped_train || r.skipped_valid) {
    spdlog::warn("skipped {} training and {} validation utterances the model cannot fit", r.skipped_train,
                 r.skipped_valid);
  }
  r.best.header.push_back(vocab_header(vocab));
  save_checkpoint(out / "model.ckpt", r.best);
  save_checkpoint(out / "last.ckpt", model.to_checkpoint({vocab_header(vocab)}));
  const double best = r.best_epoch ? r.history[r.best_epoch - 1].valid_loss : r.initial_valid_loss;
  spdlog::info("initial valid loss {:.4f}, best {:.4f} at epoch {}", r.initial_valid_loss, best, r.best_epoch);
  return 0;
}

// ---------------------------------------------------------------------------
// train-lm

KeyValues train_lm_defaults(const KeyValues&) {
  LMConfig lc;
  lc.vocab_size = 0;
  const LmTrainOptions o;
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"text", ""},
                     {"valid", ""},
                     {"vocab", ""},
                     {"out", ""},
                     {"lm_train.epochs", std::to_string(o.epochs)},
                     {"lm_train.learning_rate", format_real(o.learning_rate)},
                     {"lm_train.bptt", std::to_string(o.bptt)},
                     {"lm_train.clip", format_real(o.clip)},
                     {"lm_train.average_from", "none"}});
  const auto kv = lc.to_key_values();
  d.insert(d.end(), kv.begin(), kv.end());
  return d;
}

std::vector<std::vector<int>> encode_sentences(const std::vector<std::string>& texts, const Vocabulary& v,
                                               const std::string& what) {
  std::vector<std::vector<int>> out;
  std::size_t dropped = 0;
  for (const auto& t : texts) {
    std::vector<int> ids;
    bool ok = true;
    for (const auto& u : split_units(t)) {
      if (!v.contains(u)) {
        ok = false;
        break;
      }
      ids.push_back(v.id(u));
    }
    if (ok && !ids.empty()) out.push_back(std::move(ids));
    else ++dropped;
  }
  if (dropped) spdlog::warn("{}: dropped {} sentences that are empty or use units outside the vocabulary", what, dropped);
  return out;
}

int cmd_train_lm(const RunConfig& c) {
  const Vocabulary vocab = Vocabulary::load(c.required("vocab"));
  const fs::path out = c.required("out");
  const auto train = encode_sentences(read_sentences(c.required("text")), vocab, "text");
  if (train.empty()) throw DataError("no usable training sentences");
  std::vector<std::vector<int>> valid;
  if (!c.str("valid").empty()) valid = encode_sentences(read_sentences(c.str("valid")), vocab, "valid");

  LMConfig lc;
  try {
    lc = LMConfig::from_key_values(c.with_prefix("lm."));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (lc.vocab_size == 0) lc.vocab_size = vocab.size();
  if (lc.vocab_size != vocab.size()) throw UsageError("lm.vocab_size does not match the vocabulary");

  LmTrainOptions o;
  o.epochs = c.size("lm_train.epochs");
  o.learning_rate = c.real("lm_train.learning_rate");
  o.bptt = c.size("lm_train.bptt");
  o.clip = c.real("lm_train.clip");
  o.seed = c.seed();
  if (c.str("lm_train.average_from") != "none") o.average_from = c.size("lm_train.average_from");

  auto r = train_lm(train, valid, lc, o, [](std::size_t epoch, double ppl) {
    spdlog::info("epoch {}: perplexity {:.4f}", epoch + 1, ppl);
  });
  Checkpoint ck = r.lm.to_checkpoint();
  ck.header.push_back(vocab_header(vocab));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  spdlog::info("perplexity {:.4f} -> {:.4f}; wrote {}", r.initial_perplexity,
               r.valid_perplexity.empty() ? r.initial_perplexity : r.valid_perplexity.back(), out.string());
  return 0;
}

// ---------------------------------------------------------------------------
// decode

KeyValues decode_defaults(const KeyValues&) {
  const BeamConfig b;
  const AttentionBeamConfig a;
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"model", ""},
                     {"data", ""},
                     {"out", ""},
                     {"nbest", ""},
                     {"cost", ""},
                     {"lm", ""},
                     {"vocab", ""},
                     {"search", "beam"},
                     {"beam.size", std::to_string(b.beam_size)},
                     {"beam.expand_beam", "2"},
                     {"beam.state_beam", "1"},
                     {"beam.lm_weight", "0.3"},
                     {"beam.max_symbols", std::to_string(b.max_symbols_per_frame)},
                     {"beam.rescore", "false"},
                     {"beam.ctc_weight", format_real(a.ctc_weight)},
                     {"beam.max_length", std::to_string(a.max_length)}});
  return d;
}

int cmd_decode(const RunConfig& c) {
  const Checkpoint ck = load_checkpoint(c.required("model"));
  const Model model = Model::from_checkpoint(ck);
  const Vocabulary vocab = model_vocabulary(ck, c);
  if (vocab.size() != model.config().vocab_size) {
    throw DataError("vocab mismatch: model has " + std::to_string(model.config().vocab_size) +
                    " outputs, vocabulary has " + std::to_string(vocab.size()));
  }
  std::optional<CharLm> lm;
  if (!c.str("lm").empty()) {
    const Checkpoint lck = load_checkpoint(c.str("lm"));
    lm = CharLm::from_checkpoint(lck);
    const auto lv = vocab_from_header(lck);
    if (lm->config().vocab_size != vocab.size() || (lv && !(*lv == vocab))) {
      throw DataError("vocab mismatch: the language model was trained on a different vocabulary");
    }
  }
  const auto utts = load_feature_corpus(c.required("data"));
  for (const auto& u : utts) {
    if (u.features.dim != model.config().input_dim) {
      throw DataError(u.id + ": features have " + std::to_string(u.features.dim) + " dims, the model expects " +
                      std::to_string(model.config().input_dim));
    }
  }

  DecodeOptions o;
  try {
    o.mode = parse_search_mode(c.str("search"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  o.beam.beam_size = c.size("beam.size");
  if (o.mode == SearchMode::improved) {
    o.beam.expand_beam = c.real("beam.expand_beam");
    o.beam.state_beam = c.real("beam.state_beam");
  }
  o.beam.lm_weight = lm ? c.real("beam.lm_weight") : 0.0;
  o.beam.max_symbols_per_frame = c.size("beam.max_symbols");
  o.rescore = c.flag("beam.rescore");
  o.attention.beam_size = o.beam.beam_size;
  o.attention.ctc_weight = c.real("beam.ctc_weight");
  o.attention.max_length = c.size("beam.max_length");
  o.jobs = c.jobs();
  try {
    o.beam.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto start = std::chrono::steady_clock::now();
  const auto results = decode_corpus(model, utts, o, lm ? &*lm : nullptr);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path out = c.required("out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream hyp(out);
  if (!hyp) throw DataError("cannot write " + out.string());
  std::size_t calls = 0;
  std::map<std::string, std::string> refs, hyps;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string text = r.nbest.empty() ? "" : vocab.decode(r.nbest.front().labels);
    hyp << r.id << '\t' << text << '\n';
    calls += r.joiner_calls;
    refs[r.id] = utts[i].text;
    hyps[r.id] = text;
  }
  if (!c.str("nbest").empty()) {
    std::ofstream nb(c.str("nbest"));
    if (!nb) throw DataError("cannot write " + c.str("nbest"));
    for (const auto& r : results) {
      for (std::size_t k = 0; k < r.nbest.size(); ++k) {
        const auto& h = r.nbest[k];
        nb << r.id << ' ' << k + 1 << ' ' << format_real(h.score) << ' ' << format_real(h.model_score) << ' '
           << format_real(h.lm_score) << ' ' << vocab.decode(h.labels) << '\n';
      }
    }
  }
  std::ostringstream cost;
  cost << "search = " << to_string(o.mode) << "\nutterances = " << results.size() << "\njoiner_calls = " << calls
       << "\nwall_seconds = " << format_real(seconds) << '\n';
  if (!c.str("cost").empty()) write_text(c.str("cost"), cost.str());
  spdlog::info("decoded {} utterances in {:.2f} s with {} joiner calls", results.size(), seconds, calls);
  const bool have_refs = std::all_of(utts.begin(), utts.end(), [](const Utterance& u) { return !u.text.empty(); });
  if (have_refs && !utts.empty()) {
    spdlog::info("CER against the corpus transcripts: {:.2f}%", score_corpus(refs, hyps, ScoreUnit::character).error_rate());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// score

KeyValues score_defaults(const KeyValues&) {
  KeyValues d = common_defaults();
  d.insert(d.end(), {{"ref", ""}, {"hyp", ""}, {"unit", "word"}, {"alignment", ""}, {"summary", ""}, {"name", "hyp"}});
  return d;
}

int cmd_score(const RunConfig& c) {
  fs::path ref = c.required("ref");
  if (fs::is_directory(ref)) ref /= "text";
  ScoreUnit unit;
  try {
    unit = parse_score_unit(c.str("unit"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const ScoreReport report = score_corpus(read_id_map(ref), read_id_map(c.required("hyp")), unit);
  const std::vector<SummaryRow> rows{{c.str("name"), report.error_rate()}};
  write_summary_table(std::cout, rows, unit);
  if (!c.str("alignment").empty()) {
    std::ofstream os(c.str("alignment"));
    if (!os) throw DataError("cannot write " + c.str("alignment"));
    write_alignment_report(os, report);
  }
  if (!c.str("summary").empty()) {
    std::ofstream os(c.str("summary"));
    if (!os) throw DataError("cannot write " + c.str("summary"));
    write_summary_csv(os, rows, unit);
  }
  const auto& t = report.totals;
  spdlog::info("{} utterances, {} reference tokens: {} substitutions, {} deletions, {} insertions",
               report.utterances.size(), t.ref_tokens, t.substitutions, t.deletions, t.insertions);
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

KeyValues gradcheck_defaults(const KeyValues&) {
  KeyValues d = common_defaults();
  d.emplace_back("tolerance", "1e-4");
  return d;
}

int cmd_gradcheck(const RunConfig& c) {
  const double tol = c.real("tolerance");
  bool ok = true;
  for (const auto& r : run_gradient_checks(c.seed())) {
    const bool pass = r.max_rel_error <= tol;
    ok = ok && pass;
    std::cout << r.name << '\t' << r.parameters << " params\tmax rel error " << r.max_rel_error << '\t'
              << (pass ? "PASS" : "FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Command-line plumbing

struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  KeyValues flags;
};

struct Command {
  CLI::App* app = nullptr;
  std::function<KeyValues(const KeyValues&)> defaults;
  std::function<int(const RunConfig&)> run;
  Invocation inv;
};

class Builder {
 public:
  Builder(CLI::App* app, Invocation& inv) : app_(app), inv_(inv) {
    app_->add_option("--config", inv_.config_file, "key=value settings file");
    app_->add_option("--set", inv_.sets, "override one setting (key=value); repeatable");
    value("--seed", "seed", "random seed");
    value("--jobs", "jobs", "parallel workers");
  }
  Builder& value(const std::string& flag, const std::string& key, const std::string& help) {
    Invocation* inv = &inv_;
    app_->add_option_function<std::string>(flag, [inv, key](const std::string& v) { inv->flags.emplace_back(key, v); },
                                            help + " [" + key + "]");
    return *this;
  }
  Builder& toggle(const std::string& flag, const std::string& key, const std::string& setting, const std::string& help) {
    Invocation* inv = &inv_;
    app_->add_flag_function(flag, [inv, key, setting](std::int64_t) { inv->flags.emplace_back(key, setting); },
                            help + " [" + key + "=" + setting + "]");
    return *this;
  }

 private:
  CLI::App* app_;
  Invocation& inv_;
};

RunConfig resolve(const Command& cmd) {
  KeyValues raw;
  if (!cmd.inv.config_file.empty()) raw = read_config_file(cmd.inv.config_file);
  for (const auto& s : cmd.inv.sets) raw.push_back(split_assignment(s));
  raw.insert(raw.end(), cmd.inv.flags.begin(), cmd.inv.flags.end());
  RunConfig cfg(cmd.defaults(raw));
  cfg.apply(raw);
  cfg.seed();
  cfg.jobs();
  return cfg;
}

void setup_logging(const std::string& level_flag) {
  auto logger = spdlog::get("trnk");
  if (!logger) {
    logger = spdlog::stderr_color_mt("trnk");
    spdlog::set_default_logger(logger);
  }
  std::string level = level_flag;
  if (level.empty()) {
    const char* env = std::getenv(kLogEnv);
    level = env ? env : "info";
  }
  static const std::vector<std::string> names{"trace", "debug", "info", "warn", "error", "critical", "off"};
  if (std::find(names.begin(), names.end(), level) == names.end()) {
    throw UsageError("unknown log level '" + level + "' (trace, debug, info, warn, error, critical, off)");
  }
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Speech recognition toolkit: features, training, decoding and scoring", "trnk"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level;
  app.add_option("--log-level", log_level, std::string("log verbosity; defaults to $") + kLogEnv + " or info");

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& help, auto defaults, auto body) -> Builder {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(name, help);
    cmd->defaults = defaults;
    cmd->run = body;
    commands.push_back(std::move(cmd));
    return Builder(commands.back()->app, commands.back()->inv);
  };

  add("synth", "generate a synthetic feature corpus", synth_defaults, cmd_synth)
      .value("--out", "out", "output feature directory")
      .value("--num", "synth.num_utterances", "number of utterances")
      .value("--alphabet", "synth.alphabet", "characters to draw from")
      .value("--template-seed", "synth.template_seed", "seed of the per-character templates")
      .value("--prefix", "synth.id_prefix", "utterance id prefix");
  add("features", "extract features from a data directory", features_defaults, cmd_features)
      .value("--in", "in", "data directory with wav.scp and text")
      .value("--out", "out", "output feature directory")
      .value("--kind", "kind", "fbank, fbank_pitch, mfcc_hires or pitch")
      .toggle("--cmvn", "cmvn", "true", "per-utterance mean and variance normalisation")
      .toggle("--specaugment", "specaugment", "true", "apply SpecAugment masks");
  add("train", "train an acoustic model", train_defaults, cmd_train)
      .value("--data", "data", "training feature directory")
      .value("--valid", "valid", "validation feature directory")
      .value("--out", "out", "output directory")
      .value("--preset", "preset", "toy or paper model sizes")
      .value("--arch", "architecture", "rnnt, transformer_transducer, ctc_attention or transformer")
      .value("--vocab", "vocab", "fixed vocabulary file")
      .value("--epochs", "train.epochs", "training epochs")
      .value("--batch-size", "train.batch_size", "utterances per update")
      .value("--lr", "train.learning_rate", "learning rate")
      .toggle("--specaugment", "train.specaugment", "true", "augment training features");
  add("train-lm", "train a character language model", train_lm_defaults, cmd_train_lm)
      .value("--text", "text", "training text file or data directory")
      .value("--valid", "valid", "validation text file or data directory")
      .value("--vocab", "vocab", "vocabulary file")
      .value("--out", "out", "output checkpoint")
      .value("--epochs", "lm_train.epochs", "training epochs")
      .value("--lr", "lm_train.learning_rate", "learning rate");
  add("decode", "decode a feature directory", decode_defaults, cmd_decode)
      .value("--model", "model", "acoustic model checkpoint")
      .value("--data", "data", "feature directory")
      .value("--out", "out", "hypothesis file")
      .value("--nbest", "nbest", "n-best output file")
      .value("--cost", "cost", "decoding cost report")
      .value("--vocab", "vocab", "vocabulary file (checked against the checkpoint)")
      .value("--search", "search", "greedy, beam or improved")
      .toggle("--greedy", "search", "greedy", "greedy search")
      .toggle("--improved", "search", "improved", "pruned beam search")
      .value("--beam", "beam.size", "beam size")
      .value("--expand-beam", "beam.expand_beam", "expansion pruning margin (improved search)")
      .value("--state-beam", "beam.state_beam", "state pruning margin (improved search)")
      .value("--max-symbols", "beam.max_symbols", "label emissions per frame")
      .value("--lm", "lm", "language model checkpoint")
      .value("--lm-weight", "beam.lm_weight", "language model weight")
      .toggle("--rescore", "beam.rescore", "true", "rescore the n-best list instead of fusing");
  add("score", "score hypotheses against references", score_defaults, cmd_score)
      .value("--ref", "ref", "reference text file or data directory")
      .value("--hyp", "hyp", "hypothesis file")
      .value("--unit", "unit", "word or char")
      .value("--alignment", "alignment", "per-utterance alignment output")
      .value("--summary", "summary", "summary CSV output")
      .value("--name", "name", "row label in the summary");
  add("gradcheck", "finite-difference gradient checks", gradcheck_defaults, cmd_gradcheck)
      .value("--tolerance", "tolerance", "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    setup_logging(log_level);
    for (const auto& cmd : commands) {
      if (!cmd->app->parsed()) continue;
      const RunConfig cfg = resolve(*cmd);
      spdlog::info("{} resolved config:\n{}", cmd->app->get_name(), cfg.render());
      return cmd->run(cfg);
    }
    return 2;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ScoreError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const io::FormatError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace trnk::cli

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "search_fixtures.hpp"
#include "trnk/losses.hpp"
#include "trnk/selfcheck.hpp"
#include "trnk/training.hpp"

using namespace trnk;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[2048];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_logits(std::size_t rows, std::size_t V, Rng& rng) {
  std::vector<double> v(rows * V);
  for (double& x : v) x = rng.uniform(-3.0, 3.0);
  return Tensor::from({rows, V}, std::move(v));
}

FeatureMatrix random_features(std::size_t T, std::size_t D, Rng& rng) {
  FeatureMatrix f(T, D, FeatureKind::generic);
  for (double& v : f.values) v = rng.normal();
  return f;
}

// ---------------------------------------------------------------------------
// 1. Lattice losses against path enumeration

Outcome loss_oracles() {
  std::size_t instances = 0, infeasible = 0;
  double worst = 0.0;
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t U = 0; U <= 2; ++U) {
      for (std::size_t V = 2; V <= 3; ++V) {
        for (std::uint64_t draw = 0; draw < 200; ++draw) {
          Rng rng(testing::mix(testing::mix(T * 100 + U * 10 + V, draw), 0xacce));
          std::vector<int> y(U);
          for (int& l : y) l = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(V) - 1));
          const Tensor ctc_logits = random_logits(T, V, rng);
          const double p_ctc = testing::ctc_enumerate(ctc_logits, y);
          try {
            worst = std::max(worst, std::abs(ctc_loss(ctc_logits, y).loss + std::log(p_ctc)));
          } catch (const InfeasibleTarget&) {
            ++infeasible;
            if (p_ctc != 0.0) return {false, fmt("CTC rejected a feasible target at T=%zu U=%zu", T, U)};
          }
          const Tensor rnnt_logits = random_logits(T * (U + 1), V, rng);
          const double p_rnnt = testing::transducer_enumerate(rnnt_logits, T, y);
          worst = std::max(worst, std::abs(transducer_loss(rnnt_logits, T, y).loss + std::log(p_rnnt)));
          ++instances;
        }
      }
    }
  }
  return {worst <= 1e-9, fmt("%zu shape/draw instances (%zu CTC-infeasible, rejected), max |dloss| %.2e <= 1e-9",
                             instances, infeasible, worst)};
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradients

Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& c : run_gradient_checks(seed)) {
      ++cases;
      if (c.max_rel_error >= worst) {
        worst = c.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  return {worst <= 1e-4, fmt("%zu checks (CTC, transducer, 4 model families x 3 seeds), max rel error %.2e (%s) <= 1e-4",
                             cases, worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 3. Search soundness on random models

ModelConfig small_transducer(Architecture a, std::size_t V) {
  ModelConfig c = ModelConfig::toy(a, 8, V);
  c.vgg_channels1 = 4;
  c.vgg_channels2 = 8;
  c.encoder = {1, 16, 0.0};
  c.attention = {2, 16, 0.0};
  c.decoder = {1, 8, 0.0};
  c.joiner_units = 16;
  return c;
}

bool same_nbest(const NBestList& a, const NBestList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].labels != b[i].labels || a[i].score != b[i].score || a[i].model_score != b[i].model_score) return false;
  }
  return true;
}

Outcome search_soundness() {
  std::size_t unbounded_mismatch = 0, greedy_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto arch = seed % 2 ? Architecture::transformer_transducer : Architecture::rnnt;
    Rng rng(testing::mix(seed, 3));
    const Model m(small_transducer(arch, 6), seed + 1);
    const auto enc = m.encode(random_features(static_cast<std::size_t>(rng.uniform_int(8, 28)), 8, rng));
    ModelTransducerScorer s1(m, enc), s2(m, enc), s3(m, enc), s4(m, enc);
    BeamConfig wide;
    const auto a = beam_search(s1, wide);
    const auto b = improved_beam_search(s2, wide);
    unbounded_mismatch += !same_nbest(a, b) || s1.joiner_calls() != s2.joiner_calls();
    BeamConfig one;
    one.beam_size = 1;
    greedy_mismatch += beam_search(s3, one).front().labels != greedy_decode(s4, one.max_symbols_per_frame).labels;
  }
  return {unbounded_mismatch == 0 && greedy_mismatch == 0,
          fmt("100 random RNN-T/T-T models: improved(inf,inf) != beam in %zu, beam1 != greedy in %zu", unbounded_mismatch,
              greedy_mismatch)};
}

// ---------------------------------------------------------------------------
// 4. Exhaustive decode oracle

class RandomTable : public TransducerScorer {
 public:
  RandomTable(std::uint64_t seed, std::size_t T, std::size_t V) : seed_(seed), T_(T), V_(V) {}
  std::size_t frames() const override { return T_; }
  std::size_t vocab_size() const override { return V_; }

 protected:
  std::vector<double> joint_log_probs(std::size_t t, const std::vector<int>& p) override {
    return testing::random_log_dist(testing::prefix_key(seed_, t, p), V_, 2.0);
  }

 private:
  std::uint64_t seed_;
  std::size_t T_, V_;
};

Outcome exhaustive_oracle() {
  BeamConfig cfg;
  cfg.beam_size = 64;
  cfg.max_symbols_per_frame = 2;
  std::size_t models = 0, recovered = 0;
  auto check = [&](TransducerScorer& search, TransducerScorer& oracle) {
    const auto nb = beam_search(search, cfg);
    const auto all = testing::enumerate_sequences(oracle, 2);
    const auto best = std::max_element(all.begin(), all.end(), [](auto& x, auto& y) { return x.second < y.second; });
    ++models;
    recovered += !nb.empty() && nb.front().labels == best->first && std::abs(nb.front().score - best->second) <= 1e-9;
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Networks: blank, two labels and the reserved start symbol; 5-8 input
    // frames give two encoder frames.
    Rng rng(testing::mix(seed, 4));
    const Model m(small_transducer(seed % 2 ? Architecture::transformer_transducer : Architecture::rnnt, 4), seed + 7);
    const auto enc = m.encode(random_features(static_cast<std::size_t>(rng.uniform_int(5, 8)), 8, rng));
    if (enc.frames() != 2) return {false, "encoder did not produce two frames"};
    ModelTransducerScorer a(m, enc), b(m, enc);
    check(a, b);
    // Sharper random joint tables over three outputs.
    RandomTable c(seed, 2, 3), d(seed, 2, 3);
    check(c, d);
  }
  return {recovered == models, fmt("T'=2, 3 emittable outputs, max 2 symbols, beam 64: exhaustive best recovered on "
                                   "%zu/%zu (50 networks + 50 random tables)",
                                   recovered, models)};
}

// ---------------------------------------------------------------------------
// 6. Learnability (also provides the model for 5 and 7)

struct Trained {
  Model model;
  Vocabulary vocab;
  std::vector<Utterance> train, held_out;
};

std::vector<Utterance> synth(std::size_t n, std::uint64_t sample_seed, const std::string& prefix) {
  SyntheticSpec s;
  s.num_utterances = n;
  s.sample_seed = sample_seed;
  s.id_prefix = prefix;
  return generate_synthetic_corpus(s).utterances;
}

double parameter_checksum(const Model& m) {
  double s = 0.0;
  for (const auto& [name, t] : m.parameters().entries()) {
    for (double v : t.data()) s += v;
  }
  return s;
}

TrainOptions learnability_options(std::size_t epochs) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 1;
  o.learning_rate = 1e-3;
  o.clip = 5.0;
  o.seed = 1;
  SpecAugmentPolicy p;
  p.num_freq_masks = 1;
  p.max_freq_width = 3;
  p.num_time_masks = 1;
  p.max_time_width = 3;
  o.specaugment = p;
  return o;
}

std::optional<Trained> trained;

Outcome learnability() {
  const auto train = synth(500, 2, "train");
  const auto valid = synth(50, 3, "valid");
  const auto held_out = synth(100, 4, "test");
  std::vector<std::string> texts;
  for (const auto& u : train) texts.push_back(u.text);
  const Vocabulary vocab = build_vocabulary(texts, default_aux_units());
  const auto tr = make_examples(train, vocab), dv = make_examples(valid, vocab);
  const ModelConfig mc = ModelConfig::toy(Architecture::rnnt, 16, vocab.size());
  if (mc.encoder.layers != 2 || mc.encoder.units != 64 || mc.decoder.layers != 1 || mc.decoder.units != 32) {
    return {false, "toy preset does not match the 2x64 BLSTM / 1x32 predictor layout"};
  }

  const auto start = std::chrono::steady_clock::now();
  Model model(mc, 1);
  double epoch1_loss = 0.0, epoch1_sum = 0.0;
  auto result = train_model(model, tr, dv, learnability_options(50), [&](const EpochLog& l) {
    if (l.epoch == 1) {
      epoch1_loss = l.train_loss;
      epoch1_sum = parameter_checksum(model);
    }
  });
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  model.parameters().assign(result.best.tensors);

  // Determinism: an independent run of the first epoch must agree bit for bit.
  Model again(mc, 1);
  auto replay = train_model(again, tr, dv, learnability_options(1));
  const bool deterministic = replay.history[0].train_loss == epoch1_loss && parameter_checksum(again) == epoch1_sum;

  DecodeOptions beam;
  const double cer = decode_and_score(model, held_out, vocab, beam, ScoreUnit::character).error_rate();
  trained = Trained{model, vocab, train, held_out};
  return {cer <= 5.0 && minutes < 30.0 && deterministic,
          fmt("500 train / 100 held-out utterances, best of 50 epochs (epoch %zu by 50-utt validation): beam-10 CER "
              "%.2f%% <= 5%%, %.1f min < 30, epoch-1 replay %s",
              result.best_epoch, cer, minutes, deterministic ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------------------
// 5. Pruned search efficiency

Outcome pruned_efficiency() {
  if (!trained) return {false, "needs the criterion 6 model"};
  DecodeCost beam_cost, improved_cost;
  DecodeOptions beam;
  beam.beam.beam_size = 10;
  DecodeOptions improved = beam;
  improved.mode = SearchMode::improved;
  improved.beam.expand_beam = 2.0;
  improved.beam.state_beam = 1.0;
  const auto& t = *trained;
  const double cer_beam = decode_and_score(t.model, t.held_out, t.vocab, beam, ScoreUnit::character, &beam_cost).error_rate();
  const double cer_improved =
      decode_and_score(t.model, t.held_out, t.vocab, improved, ScoreUnit::character, &improved_cost).error_rate();
  const double saving = 1.0 - static_cast<double>(improved_cost.joiner_calls) / static_cast<double>(beam_cost.joiner_calls);
  return {saving >= 0.10 && cer_improved - cer_beam <= 1.0,
          fmt("beam 10: %zu joiner calls, CER %.2f%%; improved(2,1): %zu calls (%.1f%% fewer, need >= 10%%), CER %.2f%% "
              "(change %+.2f, need <= 1.0); wall %.2fs vs %.2fs",
              beam_cost.joiner_calls, cer_beam, improved_cost.joiner_calls, 100.0 * saving, cer_improved,
              cer_improved - cer_beam, beam_cost.wall_time.count(), improved_cost.wall_time.count())};
}

// ---------------------------------------------------------------------------
// 7. Fusion neutrality

Outcome fusion_neutrality() {
  if (!trained) return {false, "needs the criterion 6 model"};
  const auto& t = *trained;
  std::vector<std::vector<int>> sentences;
  for (const auto& u : t.train) sentences.push_back(t.vocab.encode(u.text));
  LMConfig lc;
  lc.vocab_size = t.vocab.size();
  lc.units = 32;
  lc.embedding_dim = 16;
  LmTrainOptions lo;
  lo.epochs = 2;
  const CharLm lm = train_lm(sentences, {}, lc, lo).lm;

  std::size_t fused_diff = 0, rescore_diff = 0, lists = 0;
  for (auto mode : {SearchMode::beam, SearchMode::improved}) {
    DecodeOptions plain;
    plain.mode = mode;
    plain.beam.expand_beam = mode == SearchMode::improved ? 2.0 : kUnbounded;
    plain.beam.state_beam = mode == SearchMode::improved ? 1.0 : kUnbounded;
    DecodeOptions fused = plain;
    fused.beam.lm_weight = 0.0;
    DecodeOptions rescored = fused;
    rescored.rescore = true;
    const auto a = decode_corpus(t.model, t.held_out, plain);
    const auto b = decode_corpus(t.model, t.held_out, fused, &lm);
    const auto c = decode_corpus(t.model, t.held_out, rescored, &lm);
    for (std::size_t i = 0; i < a.size(); ++i) {
      ++lists;
      fused_diff += !same_nbest(a[i].nbest, b[i].nbest);
      bool same_order = a[i].nbest.size() == c[i].nbest.size();
      for (std::size_t k = 0; same_order && k < a[i].nbest.size(); ++k) {
        same_order = a[i].nbest[k].labels == c[i].nbest[k].labels;
      }
      rescore_diff += !same_order;
    }
  }
  return {fused_diff == 0 && rescore_diff == 0,
          fmt("%zu n-best lists (beam and improved search, trained LM): fusion at weight 0 differs in %zu, rescoring at "
              "weight 0 reorders %zu",
              lists, fused_diff, rescore_diff)};
}

// ---------------------------------------------------------------------------
// 8. SpecAugment contract

Outcome specaugment_contract() {
  Rng rng(8);
  std::size_t violations = 0, identity_policies = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto T = static_cast<std::size_t>(rng.uniform_int(2, 60));
    const auto D = static_cast<std::size_t>(rng.uniform_int(2, 40));
    const FeatureMatrix f = random_features(T, D, rng);
    SpecAugmentPolicy p;
    p.num_freq_masks = static_cast<std::size_t>(rng.uniform_int(0, 3));
    p.max_freq_width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(D) - 1));
    p.num_time_masks = static_cast<std::size_t>(rng.uniform_int(0, 3));
    p.max_time_width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
    p.mask_value = rng.uniform() < 0.5 ? MaskValue::zero : MaskValue::utterance_mean;
    const auto r = apply_specaugment_with_masks(f, p, rng);
    const auto& g = r.features;
    bool ok = g.num_frames == T && g.dim == D && g.values.size() == f.values.size();
    ok = ok && r.freq_bands.size() == p.num_freq_masks && r.time_bands.size() == p.num_time_masks;
    std::vector<bool> masked(T * D, false);
    for (const auto& b : r.freq_bands) {
      ok = ok && b.width <= p.max_freq_width && b.start + b.width <= D;
      for (std::size_t t = 0; ok && t < T; ++t)
        for (std::size_t d = b.start; d < b.start + b.width; ++d) masked[t * D + d] = true;
    }
    for (const auto& b : r.time_bands) {
      ok = ok && b.width <= p.max_time_width && b.start + b.width <= T;
      for (std::size_t t = b.start; ok && t < b.start + b.width; ++t)
        for (std::size_t d = 0; d < D; ++d) masked[t * D + d] = true;
    }
    double mean = 0.0;
    for (double v : f.values) mean += v;
    mean /= static_cast<double>(f.values.size());
    const double fill = p.mask_value == MaskValue::zero ? 0.0 : mean;
    for (std::size_t i = 0; ok && i < f.values.size(); ++i) ok = g.values[i] == (masked[i] ? fill : f.values[i]);
    // The zero policy in both forms: no masks, or masks of zero width.
    SpecAugmentPolicy none = p;
    none.num_freq_masks = none.num_time_masks = 0;
    SpecAugmentPolicy narrow = p;
    narrow.max_freq_width = narrow.max_time_width = 0;
    ok = ok && apply_specaugment(f, none, rng).values == f.values && apply_specaugment(f, narrow, rng).values == f.values;
    identity_policies += 2;
    violations += !ok;
  }
  return {violations == 0, fmt("1000 random policies on random shapes (+%zu zero policies): %zu violations",
                               identity_policies, violations)};
}

// ---------------------------------------------------------------------------
// 9. Scorer against an exhaustive alignment oracle

struct Sdi {
  std::size_t s = 0, d = 0, i = 0;
  std::size_t cost() const { return s + d + i; }
};

// Every alignment of ref against hyp is enumerated; the reference choice is
// the cheapest one with the most substitutions, which fixes S, D and I.
Sdi exhaustive_alignment(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::map<std::pair<std::size_t, std::size_t>, Sdi> memo;
  std::function<Sdi(std::size_t, std::size_t)> best = [&](std::size_t i, std::size_t j) -> Sdi {
    if (i == ref.size()) return {0, 0, hyp.size() - j};
    if (j == hyp.size()) return {0, ref.size() - i, 0};
    if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
    std::vector<Sdi> options;
    Sdi diag = best(i + 1, j + 1);
    diag.s += ref[i] != hyp[j];
    options.push_back(diag);
    Sdi ins = best(i, j + 1);
    ++ins.i;
    options.push_back(ins);
    Sdi del = best(i + 1, j);
    ++del.d;
    options.push_back(del);
    const Sdi pick = *std::min_element(options.begin(), options.end(), [](const Sdi& a, const Sdi& b) {
      return a.cost() != b.cost() ? a.cost() < b.cost() : a.s > b.s;
    });
    memo[{i, j}] = pick;
    return pick;
  };
  return best(0, 0);
}

Outcome scorer_oracle() {
  Rng rng(9);
  std::size_t disagreements = 0, distance_errors = 0;
  for (int pair = 0; pair < 500; ++pair) {
    auto draw = [&](std::int64_t lo) {
      std::vector<std::string> out(static_cast<std::size_t>(rng.uniform_int(lo, 8)));
      for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng.uniform_int(0, 3)));
      return out;
    };
    const auto ref = draw(1), hyp = draw(0);
    const auto got = edit_align(ref, hyp).counts;
    const Sdi want = exhaustive_alignment(ref, hyp);
    disagreements += got.substitutions != want.s || got.deletions != want.d || got.insertions != want.i;
    distance_errors += got.errors() != testing::edit_distance(ref, hyp);
  }
  return {disagreements == 0 && distance_errors == 0,
          fmt("500 random token-sequence pairs: S/D/I disagree in %zu, edit distance disagrees in %zu", disagreements,
              distance_errors)};
}

// ---------------------------------------------------------------------------
// 10. Feature pipeline

Waveform tone(double hz, std::size_t samples = 16000) {
  Waveform w;
  w.samples.resize(samples);
  for (std::size_t n = 0; n < samples; ++n) w.samples[n] = 0.5 * std::sin(2.0 * std::numbers::pi * hz * n / 16000.0);
  return w;
}

Outcome feature_pipeline() {
  Rng rng(10);
  Waveform noise;
  noise.samples.resize(16000);
  for (double& s : noise.samples) s = rng.uniform(-0.5, 0.5);
  const auto fb = compute_features(noise, FeatureKind::fbank80);
  const auto fp = compute_features(noise, FeatureKind::fbank80_pitch3);
  bool ok = fb.num_frames == 98 && fb.dim == 80 && fp.num_frames == 98 && fp.dim == 83;

  const auto centers = mel_center_frequencies(FbankOptions{}, 16000);
  std::size_t bad_frames = 0, frames = 0;
  for (double hz : {300.0, 1000.0, 2500.0, 5000.0}) {
    const auto f = compute_fbank(tone(hz));
    std::size_t below = 0;
    while (below + 1 < centers.size() && centers[below + 1] <= hz) ++below;
    for (std::size_t t = 0; t < f.num_frames; ++t) {
      const auto row = f.row(t);
      const auto peak = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      bad_frames += peak != below && peak != below + 1;
      ++frames;
    }
  }
  ok = ok && bad_frames == 0;
  return {ok, fmt("1 s at 16 kHz: fbank %zux%zu, fbank+pitch %zux%zu; tone peak in the bracketing mel bins on %zu/%zu "
                  "frames (300 Hz to 5 kHz)",
                  fb.num_frames, fb.dim, fp.num_frames, fp.dim, frames - bad_frames, frames)};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // 0: none stated
    std::function<Outcome()> run;
  };
  // 6 runs before 5 and 7, which reuse its model.
  const std::vector<Criterion> criteria{
      {1, "loss oracles", 10, loss_oracles},
      {2, "gradient checks", 120, gradient_checks},
      {3, "search soundness", 60, search_soundness},
      {4, "exhaustive decode oracle", 0, exhaustive_oracle},
      {8, "SpecAugment contract", 0, specaugment_contract},
      {9, "scorer oracle", 0, scorer_oracle},
      {10, "feature pipeline", 0, feature_pipeline},
      {6, "end-to-end learnability", 1800, learnability},
      {5, "pruned search efficiency", 300, pruned_efficiency},
      {7, "fusion neutrality", 0, fusion_neutrality},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  if (only.count(5) || only.count(7)) only.insert(6);

  std::map<int, std::string> lines;
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", c.budget_seconds);
    }
    failures += !o.pass;
    lines[c.id] = fmt("criterion %2d %s  %-26s %s (%.1f s)", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fprintf(stderr, "%s\n", lines[c.id].c_str());
  }
  std::printf("\n");
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("%zu criteria, %d failed\n", lines.size(), failures);
  return failures ? 1 : 0;
}

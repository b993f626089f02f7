// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "trnk/langmodel.hpp"
#include "trnk/losses.hpp"

using namespace trnk;

namespace {

LMConfig small(std::size_t V = 6) {
  LMConfig c;
  c.vocab_size = V;
  c.layers = 1;
  c.units = 16;
  c.embedding_dim = 8;
  c.weight_drop = 0.0;
  c.input_dropout = 0.0;
  c.output_dropout = 0.0;
  return c;
}

double lse(const std::vector<double>& v) { return log_sum_exp(v); }

}  // namespace

TEST(LmConfig, ValidationAndKeyValues) {
  LMConfig c = small();
  c.weight_drop = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.weight_drop = 0.25;
  c.tie_embeddings = true;
  std::map<std::string, std::string> kv;
  for (auto& [k, v] : c.to_key_values()) kv[k] = v;
  LMConfig back = LMConfig::from_key_values(kv);
  EXPECT_EQ(back.weight_drop, 0.25);
  EXPECT_TRUE(back.tie_embeddings);
  EXPECT_EQ(back.units, 16u);
  EXPECT_THROW(LMConfig::from_key_values({{"lm.colour", "red"}}), std::invalid_argument);
}

TEST(LmScoreStep, ZeroWeightsGiveUniform) {
  CharLm lm(small(), 1);
  for (const auto& [name, t] : lm.parameters().entries()) {
    Tensor w = t;
    for (double& v : w.mutable_data()) v = 0.0;
  }
  auto [lp, next] = lm_score_step(lm, lm.initial_state(), lm.start_id());
  for (double v : lp) EXPECT_NEAR(v, -std::log(6.0), 1e-12);
}

TEST(LmScoreStep, NormalizedDeterministicAndChecked) {
  CharLm lm(small(), 2);
  LMState s = lm.initial_state();
  for (int y : {5, 1, 2, 3, 3, 4}) {
    auto [a, sa] = lm_score_step(lm, s, y);
    auto [b, sb] = lm_score_step(lm, s, y);
    EXPECT_NEAR(lse(a), 0.0, 1e-10);
    EXPECT_EQ(a, b);
    EXPECT_EQ(sa.carry[0].h.to_vector(), sb.carry[0].h.to_vector());
    s = sa;
  }
  EXPECT_THROW(lm_score_step(lm, s, 6), std::out_of_range);
  EXPECT_THROW(lm_score_step(lm, s, -1), std::out_of_range);
}

TEST(LmScoreStep, ChainScoreMatchesCrossEntropy) {
  LMConfig c = small();
  c.layers = 2;
  CharLm lm(c, 3);
  const std::vector<int> y{1, 3, 2, 2, 4};
  LMState s = lm.initial_state();
  double chain = 0.0;
  int prev = lm.start_id();
  std::vector<int> targets = y;
  targets.push_back(lm.end_id());
  for (int t : targets) {
    auto [lp, next] = lm_score_step(lm, s, prev);
    chain += lp[static_cast<std::size_t>(t)];
    s = next;
    prev = t;
  }
  Rng unused(0);
  const double ce = lm.sentence_loss(y, false, unused).item();
  EXPECT_NEAR(chain, -ce * static_cast<double>(targets.size()), 1e-10);
  EXPECT_NEAR(chain, lm.sentence_log_prob(y), 1e-10);
  LmPrefixScorer scorer(lm);
  EXPECT_NEAR(scorer.sequence_log_prob(y), chain, 1e-10);
}

TEST(WeightDrop, IdentityCases) {
  Rng rng(1);
  Tensor w = Tensor::parameter({10, 40}, rng);
  EXPECT_EQ(weight_drop_apply(w, 0.0, true, rng).node(), w.node());
  EXPECT_EQ(weight_drop_apply(w, 0.7, false, rng).node(), w.node());
  EXPECT_THROW(weight_drop_apply(w, 1.0, true, rng), std::invalid_argument);
}

TEST(WeightDrop, SurvivorFractionAndScaling) {
  Rng rng(2);
  Tensor w = Tensor::full({100, 100}, 1.0);
  Tensor d = weight_drop_apply(w, 0.5, true, rng);
  std::size_t survivors = 0;
  for (double v : d.data()) {
    if (v != 0.0) {
      ++survivors;
      EXPECT_DOUBLE_EQ(v, 2.0);
    }
  }
  EXPECT_NEAR(static_cast<double>(survivors) / 1e4, 0.5, 0.02);
  Tensor e = weight_drop_apply(w, 0.5, true, rng);
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < d.size(); ++i) disagree += d.data()[i] != e.data()[i];
  EXPECT_GT(disagree, 0u);
}

TEST(WeightDrop, TrainModeMasksFixedWithinSequence) {
  LMConfig c = small();
  c.weight_drop = 0.5;
  CharLm lm(c, 4);
  const std::vector<int> in{5, 1, 2};
  Rng a(9), b(9), other(10);
  auto x = lm.forward(in, lm.initial_state(), true, a).to_vector();
  auto y = lm.forward(in, lm.initial_state(), true, b).to_vector();
  auto z = lm.forward(in, lm.initial_state(), true, other).to_vector();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  Rng e1(1), e2(2);
  EXPECT_EQ(lm.forward(in, lm.initial_state(), false, e1).to_vector(),
            lm.forward(in, lm.initial_state(), false, e2).to_vector());
}

TEST(LmGradients, OneLayerToyPassesFiniteDifferences) {
  LMConfig c = small(5);
  c.units = 6;
  c.embedding_dim = 4;
  c.weight_drop = 0.3;
  c.input_dropout = 0.2;
  CharLm lm(c, 5);
  const std::vector<int> y{1, 2, 3, 1};
  auto params = lm.parameters().tensors();
  auto f = [&] {
    Rng rng(77);
    return lm.sentence_loss(y, true, rng);
  };
  auto report = check_gradients(f, params);
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(LmGradients, TiedEmbeddingsPassFiniteDifferences) {
  LMConfig c = small(5);
  c.units = 6;
  c.embedding_dim = 4;
  c.layers = 2;
  c.tie_embeddings = true;
  CharLm lm(c, 6);
  EXPECT_FALSE(lm.output.has_value());
  const std::vector<int> y{2, 2, 1};
  auto params = lm.parameters().tensors();
  auto report = check_gradients([&] {
    Rng rng(0);
    return lm.sentence_loss(y, false, rng);
  }, params);
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(LmTraining, UntrainedPerplexityNearVocabularySize) {
  LMConfig c = small(8);
  c.units = 8;
  CharLm lm(c, 7);
  Rng rng(3);
  std::vector<std::vector<int>> text(200);
  for (auto& s : text) {
    s.resize(20);
    for (int& y : s) y = 1 + static_cast<int>(rng.uniform() * 6.0) % 6;
  }
  // Small random weights keep the distribution close to uniform over all 8 ids.
  EXPECT_NEAR(perplexity(lm, text), 8.0, 0.4);
}

TEST(LmTraining, RepeatedCharacterCorpusReachesPerplexityOne) {
  std::vector<std::vector<int>> text(100, std::vector<int>{2, 2, 2});
  LmTrainOptions opt;
  opt.epochs = 20;
  opt.learning_rate = 2.0;
  opt.clip = 1.0;
  opt.bptt = 16;
  auto r = train_lm(text, text, small(), opt);
  ASSERT_EQ(r.valid_perplexity.size(), 20u);
  EXPECT_LT(r.valid_perplexity.back(), 1.05);
  EXPECT_GT(r.initial_perplexity, 5.0);
}

TEST(LmTraining, AlternationReachesPerplexityOne) {
  std::vector<std::vector<int>> text(100, std::vector<int>{1, 3, 1, 3});
  LmTrainOptions opt;
  opt.epochs = 20;
  opt.learning_rate = 2.0;
  opt.clip = 1.0;
  opt.bptt = 16;
  auto r = train_lm(text, text, small(), opt);
  EXPECT_LT(r.valid_perplexity.back(), 1.05);
}

TEST(LmTraining, DeterministicImprovesAndAverages) {
  Rng rng(4);
  std::vector<std::vector<int>> text(30);
  for (auto& s : text) {
    // Biased text: label 1 fills about half the positions.
    for (int k = 0; k < 8; ++k) s.push_back(rng.uniform() < 0.5 ? 1 : 2 + static_cast<int>(rng.uniform() * 3) % 3);
  }
  LMConfig c = small();
  c.weight_drop = 0.3;
  LmTrainOptions opt;
  opt.epochs = 3;
  opt.average_from = 1;
  std::vector<std::size_t> seen;
  auto a = train_lm(text, {}, c, opt, [&](std::size_t e, double) { seen.push_back(e); });
  auto b = train_lm(text, {}, c, opt);
  EXPECT_EQ(a.valid_perplexity, b.valid_perplexity);
  EXPECT_LT(a.valid_perplexity.back(), a.initial_perplexity);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(train_lm({}, {}, c, opt), std::invalid_argument);
  EXPECT_THROW(train_lm({{1, 9}}, {}, c, opt), std::out_of_range);
}

TEST(LmCheckpoint, RoundTrip) {
  LMConfig c = small();
  c.layers = 2;
  CharLm lm(c, 8);
  std::stringstream ss;
  write_checkpoint(ss, lm.to_checkpoint());
  CharLm back = CharLm::from_checkpoint(read_checkpoint(ss));
  EXPECT_EQ(back.config().layers, 2u);
  EXPECT_EQ(back.sentence_log_prob(std::vector<int>{1, 2}), lm.sentence_log_prob(std::vector<int>{1, 2}));
  Model acoustic(ModelConfig::toy(Architecture::rnnt, 16, 6), 1);
  EXPECT_THROW(CharLm::from_checkpoint(acoustic.to_checkpoint()), std::invalid_argument);
}

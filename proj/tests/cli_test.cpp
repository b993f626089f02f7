// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "run_config.hpp"
#include "trnk/keyvalue.hpp"
#include "trnk/training.hpp"

using namespace trnk;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("trnk_cli_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

int trnk_main(std::vector<std::string> args) {
  args.insert(args.begin(), "trnk");
  args.emplace_back("--log-level");
  args.emplace_back("warn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

/// Two one-second utterances: a tone and a chirp.
fs::path audio_data_dir(const TempDir& tmp) {
  const fs::path dir = tmp / "audio";
  fs::create_directories(dir);
  for (int k = 0; k < 2; ++k) {
    Waveform w;
    w.samples.resize(16000);
    for (std::size_t n = 0; n < w.samples.size(); ++n) {
      const double t = static_cast<double>(n) / 16000.0;
      w.samples[n] = 0.5 * std::sin(2.0 * M_PI * (200.0 + 100.0 * k * t) * t);
    }
    write_wav(dir / ("u" + std::to_string(k) + ".wav"), w);
  }
  write_file(dir / "wav.scp", "u0 u0.wav\nu1 u1.wav\n");
  write_file(dir / "text", "u0 hello there\nu1 good morning\n");
  return dir;
}

std::vector<std::string> tiny_model_flags() {
  return {"--set", "encoder.units=8", "--set", "decoder.units=8", "--set", "joiner.units=8",
          "--set", "vgg.channels1=2",  "--set", "vgg.channels2=4",  "--set", "vocab.aux_units="};
}

/// Synthetic train and dev feature corpora sharing character templates.
void synth_corpora(const TempDir& tmp, std::size_t n_train = 16) {
  const std::vector<std::string> common{"--set", "synth.alphabet=abcd", "--set", "synth.max_length=4"};
  auto train = std::vector<std::string>{"synth", "--out", (tmp / "train").string(), "--num",
                                        std::to_string(n_train), "--seed", "2"};
  auto dev = std::vector<std::string>{"synth", "--out", (tmp / "dev").string(), "--num", "6", "--seed", "3",
                                      "--prefix", "dev"};
  train.insert(train.end(), common.begin(), common.end());
  dev.insert(dev.end(), common.begin(), common.end());
  ASSERT_EQ(trnk_main(train), 0);
  ASSERT_EQ(trnk_main(dev), 0);
}

int train(const TempDir& tmp, const std::string& out, const std::string& epochs, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"train", "--data", (tmp / "train").string(), "--valid", (tmp / "dev").string(),
                                "--out", (tmp / out).string(), "--epochs", epochs, "--seed", "5"};
  const auto tiny = tiny_model_flags();
  args.insert(args.end(), tiny.begin(), tiny.end());
  args.insert(args.end(), extra.begin(), extra.end());
  return trnk_main(args);
}

}  // namespace

TEST(RunConfig, PrecedenceAndUnknownKeys) {
  cli::RunConfig c({{"a", "1"}, {"b", "x"}});
  c.apply({{"a", "2"}, {"a", "3"}});
  EXPECT_EQ(c.size("a"), 3u);
  EXPECT_THROW(c.set("c", "1"), cli::UsageError);
  EXPECT_THROW(c.size("b"), cli::UsageError);
  EXPECT_EQ(c.render(), "a = 3\nb = x\n");
  EXPECT_EQ(cli::split_assignment("k=v=w"), (std::pair<std::string, std::string>{"k", "v=w"}));
  EXPECT_THROW(cli::split_assignment("novalue"), cli::UsageError);
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(trnk_main({}), 2);
  EXPECT_EQ(trnk_main({"frobnicate"}), 2);
  EXPECT_EQ(trnk_main({"score", "--ref"}), 2);
  EXPECT_EQ(trnk_main({"gradcheck", "--set", "colour=red"}), 2);
  EXPECT_EQ(trnk_main({"gradcheck", "--config", "/nonexistent/run.conf"}), 2);
  EXPECT_EQ(trnk_main({"gradcheck", "--jobs", "0"}), 2);
}

TEST(CliFeatures, FbankAndPitchDimensions) {
  TempDir tmp;
  const fs::path in = audio_data_dir(tmp);
  ASSERT_EQ(trnk_main({"features", "--in", in.string(), "--out", (tmp / "fbank").string(), "--kind", "fbank"}), 0);
  ASSERT_EQ(trnk_main({"features", "--in", in.string(), "--out", (tmp / "fp").string(), "--kind", "fbank_pitch",
                       "--jobs", "2"}),
            0);
  const auto fb = load_feature_corpus(tmp / "fbank");
  const auto fp = load_feature_corpus(tmp / "fp");
  ASSERT_EQ(fb.size(), 2u);
  ASSERT_EQ(fp.size(), 2u);
  EXPECT_EQ(fb[0].features.dim, 80u);
  EXPECT_EQ(fb[0].features.num_frames, 98u);
  EXPECT_EQ(fp[1].features.dim, 83u);
  EXPECT_EQ(fb[1].text, "good morning");
  EXPECT_TRUE(fs::exists(tmp / "fbank" / "feats.scp"));
}

TEST(CliFeatures, SpecAugmentIsSeededPerUtterance) {
  TempDir tmp;
  const fs::path in = audio_data_dir(tmp);
  auto run = [&](const std::string& out, const std::string& seed, const std::string& jobs) {
    return trnk_main({"features", "--in", in.string(), "--out", (tmp / out).string(), "--specaugment", "--seed", seed,
                      "--jobs", jobs});
  };
  ASSERT_EQ(run("a", "4", "1"), 0);
  ASSERT_EQ(run("b", "4", "2"), 0);
  ASSERT_EQ(run("c", "5", "1"), 0);
  const auto a = load_feature_corpus(tmp / "a"), b = load_feature_corpus(tmp / "b"), c = load_feature_corpus(tmp / "c");
  EXPECT_EQ(a[0].features.values, b[0].features.values);
  EXPECT_EQ(a[1].features.values, b[1].features.values);
  EXPECT_NE(a[0].features.values, c[0].features.values);
}

TEST(CliFeatures, MissingDirectoryExitsTwo) {
  TempDir tmp;
  EXPECT_EQ(trnk_main({"features", "--in", (tmp / "nowhere").string(), "--out", (tmp / "o").string()}), 2);
  EXPECT_EQ(trnk_main({"features", "--out", (tmp / "o").string()}), 2);
  const fs::path in = audio_data_dir(tmp);
  EXPECT_EQ(trnk_main({"features", "--in", in.string(), "--out", (tmp / "o").string(), "--kind", "spectrogram"}), 2);
}

TEST(CliTrain, ZeroEpochsWritesInitialisation) {
  TempDir tmp;
  synth_corpora(tmp);
  ASSERT_EQ(train(tmp, "m", "0"), 0);
  for (const char* f : {"model.ckpt", "last.ckpt", "vocab.txt", "train_log.tsv", "config.txt"}) {
    EXPECT_TRUE(fs::exists(tmp / "m" / f)) << f;
  }
  const Checkpoint ck = load_checkpoint(tmp / "m" / "model.ckpt");
  const Model trained = Model::from_checkpoint(ck);
  const Model fresh(trained.config(), 5);
  const auto a = trained.to_checkpoint(), b = fresh.to_checkpoint();
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].second.to_vector(), b.tensors[i].second.to_vector()) << a.tensors[i].first;
  }
  EXPECT_EQ(Vocabulary::load(tmp / "m" / "vocab.txt").size(), trained.config().vocab_size);
  EXPECT_EQ(ck.header_value("vocab"), "a b c d");
}

TEST(CliTrain, SameSeedSameLossAndLossFalls) {
  TempDir tmp;
  synth_corpora(tmp);
  ASSERT_EQ(train(tmp, "a", "3"), 0);
  ASSERT_EQ(train(tmp, "b", "3"), 0);
  auto losses = [&](const std::string& dir) {
    std::vector<std::string> rows;
    std::istringstream is(slurp(tmp / dir / "train_log.tsv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      std::istringstream f(line);
      std::string epoch, train_loss, valid_loss;
      f >> epoch >> train_loss >> valid_loss;
      rows.push_back(epoch + " " + train_loss + " " + valid_loss);
    }
    return rows;
  };
  const auto a = losses("a"), b = losses("b");
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].substr(0, 2), std::to_string(i + 1) + " ");
  const auto first = std::stod(a.front().substr(a.front().rfind(' ')));
  const auto last = std::stod(a.back().substr(a.back().rfind(' ')));
  EXPECT_LT(last, first);
}

TEST(CliTrain, ConfigFileFlagsWinAndMismatchesFail) {
  TempDir tmp;
  synth_corpora(tmp);
  write_file(tmp / "run.conf", "# toy run\ntrain.epochs = 3\nencoder.layers = 1\n");
  ASSERT_EQ(train(tmp, "m", "0", {"--config", (tmp / "run.conf").string()}), 0);
  const std::string cfg = slurp(tmp / "m" / "config.txt");
  EXPECT_NE(cfg.find("train.epochs = 0\n"), std::string::npos);
  EXPECT_NE(cfg.find("encoder.layers = 1\n"), std::string::npos);
  EXPECT_EQ(slurp(tmp / "m" / "train_log.tsv").find("\n1\t"), std::string::npos);
  // Architecture settings that contradict the data are rejected.
  EXPECT_EQ(train(tmp, "bad", "0", {"--set", "input_dim=40"}), 2);
  EXPECT_EQ(train(tmp, "bad", "0", {"--arch", "lstm"}), 2);
  EXPECT_EQ(train(tmp, "bad", "0", {"--set", "encoder.colour=red"}), 2);
}

TEST(CliDecode, BeamOneEqualsGreedyAndCostReport) {
  TempDir tmp;
  synth_corpora(tmp);
  ASSERT_EQ(train(tmp, "m", "2"), 0);
  const std::string model = (tmp / "m" / "model.ckpt").string(), dev = (tmp / "dev").string();
  ASSERT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "beam1.txt").string(), "--beam", "1",
                       "--cost", (tmp / "cost.txt").string(), "--nbest", (tmp / "nbest.txt").string()}),
            0);
  ASSERT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "greedy.txt").string(), "--greedy"}),
            0);
  ASSERT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "improved.txt").string(),
                       "--improved", "--expand-beam", "2", "--state-beam", "1", "--jobs", "3"}),
            0);
  EXPECT_EQ(slurp(tmp / "beam1.txt"), slurp(tmp / "greedy.txt"));
  const auto hyps = read_id_map(tmp / "improved.txt");
  EXPECT_EQ(hyps.size(), 6u);
  const auto cost = parse_key_values(slurp(tmp / "cost.txt"));
  EXPECT_EQ(cost.at("utterances"), "6");
  EXPECT_EQ(cost.at("search"), "beam");
  EXPECT_GT(std::stoul(cost.at("joiner_calls")), 0u);
  std::istringstream nb(slurp(tmp / "nbest.txt"));
  std::string id, rank;
  nb >> id >> rank;
  EXPECT_EQ(id, "dev_0");
  EXPECT_EQ(rank, "1");
}

TEST(CliDecode, MissingCheckpointAndVocabMismatch) {
  TempDir tmp;
  synth_corpora(tmp);
  ASSERT_EQ(train(tmp, "m", "0"), 0);
  const std::string model = (tmp / "m" / "model.ckpt").string(), dev = (tmp / "dev").string();
  EXPECT_EQ(trnk_main({"decode", "--model", (tmp / "none.ckpt").string(), "--data", dev, "--out",
                       (tmp / "h.txt").string()}),
            2);
  Vocabulary(std::vector<std::string>{"a", "b", "c", "e"}).save(tmp / "other_vocab.txt");
  EXPECT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "h.txt").string(), "--vocab",
                       (tmp / "other_vocab.txt").string()}),
            2);
  EXPECT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "h.txt").string(), "--search",
                       "fast"}),
            2);
}

TEST(CliLm, TrainAndZeroWeightFusionIsNeutral) {
  TempDir tmp;
  synth_corpora(tmp);
  ASSERT_EQ(train(tmp, "m", "1"), 0);
  write_file(tmp / "lm.txt", "abcd\ndcba\nabab\ncdcd\nxyz\n");
  ASSERT_EQ(trnk_main({"train-lm", "--text", (tmp / "lm.txt").string(), "--valid", (tmp / "dev").string(), "--vocab",
                       (tmp / "m" / "vocab.txt").string(), "--out", (tmp / "lm" / "lm.ckpt").string(), "--epochs",
                       "2", "--set", "lm.units=8", "--set", "lm.embedding_dim=4"}),
            0);
  const std::string model = (tmp / "m" / "model.ckpt").string(), dev = (tmp / "dev").string();
  const std::string lm = (tmp / "lm" / "lm.ckpt").string();
  ASSERT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "plain.txt").string(), "--nbest",
                       (tmp / "plain.nb").string()}),
            0);
  ASSERT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "fused.txt").string(), "--lm", lm,
                       "--lm-weight", "0", "--nbest", (tmp / "fused.nb").string()}),
            0);
  EXPECT_EQ(slurp(tmp / "plain.txt"), slurp(tmp / "fused.txt"));
  // Fused scores equal plain scores; only the reported LM column differs.
  auto column = [&](const std::string& f, int k) {
    std::vector<std::string> out;
    std::istringstream is(slurp(tmp / f));
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::string field;
      for (int i = 0; i <= k; ++i) ls >> field;
      out.push_back(field);
    }
    return out;
  };
  EXPECT_EQ(column("plain.nb", 2), column("fused.nb", 2));
  EXPECT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "r.txt").string(), "--lm", lm,
                       "--rescore", "--lm-weight", "0.5"}),
            0);
  // An LM over another vocabulary is refused.
  Vocabulary(std::vector<std::string>{"a", "b", "c", "d", "e"}).save(tmp / "v5.txt");
  ASSERT_EQ(trnk_main({"train-lm", "--text", (tmp / "lm.txt").string(), "--vocab", (tmp / "v5.txt").string(), "--out",
                       (tmp / "lm5.ckpt").string(), "--epochs", "1", "--set", "lm.units=4", "--set",
                       "lm.embedding_dim=2"}),
            0);
  EXPECT_EQ(trnk_main({"decode", "--model", model, "--data", dev, "--out", (tmp / "x.txt").string(), "--lm",
                       (tmp / "lm5.ckpt").string()}),
            2);
}

TEST(CliScore, IdenticalFilesScoreZero) {
  TempDir tmp;
  write_file(tmp / "ref.txt", "u1 the cat sat\nu2 on the mat\n");
  ASSERT_EQ(trnk_main({"score", "--ref", (tmp / "ref.txt").string(), "--hyp", (tmp / "ref.txt").string(), "--summary",
                       (tmp / "s.csv").string(), "--alignment", (tmp / "a.txt").string(), "--name", "same"}),
            0);
  EXPECT_EQ(slurp(tmp / "s.csv"), "model,wer\nsame,0.00\n");
  EXPECT_NE(slurp(tmp / "a.txt").find("u1"), std::string::npos);
}

TEST(CliScore, OneSubstitution) {
  TempDir tmp;
  write_file(tmp / "ref.txt", "u1 a b c d\n");
  write_file(tmp / "hyp.txt", "u1\ta x c d\n");
  ASSERT_EQ(trnk_main({"score", "--ref", (tmp / "ref.txt").string(), "--hyp", (tmp / "hyp.txt").string(), "--summary",
                       (tmp / "s.csv").string()}),
            0);
  EXPECT_EQ(slurp(tmp / "s.csv"), "model,wer\nhyp,25.00\n");
  ASSERT_EQ(trnk_main({"score", "--ref", (tmp / "ref.txt").string(), "--hyp", (tmp / "hyp.txt").string(), "--unit",
                       "char", "--summary", (tmp / "c.csv").string()}),
            0);
  EXPECT_EQ(slurp(tmp / "c.csv"), "model,cer\nhyp,25.00\n");  // spaces are not scored
  write_file(tmp / "stray.txt", "u9 a\n");
  EXPECT_EQ(trnk_main({"score", "--ref", (tmp / "ref.txt").string(), "--hyp", (tmp / "stray.txt").string()}), 2);
}

TEST(CliScore, MatchesLibraryOnRandomFixtures) {
  TempDir tmp;
  Rng rng(11);
  const std::vector<std::string> words{"a", "b", "c", "dd", "e"};
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, std::string> refs, hyps;
    for (int u = 0; u < 5; ++u) {
      auto sentence = [&] {
        std::string s;
        const auto n = rng.uniform_int(1, 6);
        for (std::int64_t i = 0; i < n; ++i) s += (i ? " " : "") + words[static_cast<std::size_t>(rng.uniform_int(0, 4))];
        return s;
      };
      refs["u" + std::to_string(u)] = sentence();
      hyps["u" + std::to_string(u)] = sentence();
    }
    write_id_map(tmp / "r.txt", refs);
    write_id_map(tmp / "h.txt", hyps);
    ASSERT_EQ(trnk_main({"score", "--ref", (tmp / "r.txt").string(), "--hyp", (tmp / "h.txt").string(), "--summary",
                         (tmp / "s.csv").string()}),
              0);
    std::ostringstream expect;
    const std::vector<SummaryRow> rows{{"hyp", score_corpus(refs, hyps, ScoreUnit::word).error_rate()}};
    write_summary_csv(expect, rows, ScoreUnit::word);
    EXPECT_EQ(slurp(tmp / "s.csv"), expect.str());
  }
}

TEST(CliGradcheck, PassesAtDefaultTolerance) {
  EXPECT_EQ(trnk_main({"gradcheck", "--seed", "3"}), 0);
  EXPECT_EQ(trnk_main({"gradcheck", "--tolerance", "0"}), 1);
}

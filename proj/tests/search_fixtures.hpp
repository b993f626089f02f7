// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic random scorers: every distribution is a pure function of the
// seed and the query, so repeated or reordered calls agree.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "trnk/decode.hpp"
#include "trnk/numerics.hpp"

namespace trnk::testing {

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdULL;
  return h ^ (h >> 33);
}

inline std::vector<double> random_log_dist(std::uint64_t key, std::size_t V, double sharpness) {
  Rng rng(key);
  std::vector<double> z(V);
  for (double& v : z) v = sharpness * rng.normal();
  const double lse = log_sum_exp(z);
  for (double& v : z) v -= lse;
  return z;
}

inline std::uint64_t prefix_key(std::uint64_t seed, std::size_t t, const std::vector<int>& prefix) {
  std::uint64_t h = mix(seed, t);
  for (int y : prefix) h = mix(h, static_cast<std::uint64_t>(y) + 1);
  return mix(h, prefix.size());
}

class HashScorer : public TransducerScorer {
 public:
  HashScorer(std::uint64_t seed, std::size_t T, std::size_t V, double sharpness)
      : seed_(seed), T_(T), V_(V), sharp_(sharpness) {}
  std::size_t frames() const override { return T_; }
  std::size_t vocab_size() const override { return V_; }

 protected:
  std::vector<double> joint_log_probs(std::size_t t, const std::vector<int>& prefix) override {
    return random_log_dist(prefix_key(seed_, t, prefix), V_, sharp_);
  }

 private:
  std::uint64_t seed_;
  std::size_t T_, V_;
  double sharp_;
};

class HashLm : public PrefixScorer {
 public:
  HashLm(std::uint64_t seed, std::size_t V, int end) : seed_(seed), V_(V), end_(end) {}
  std::vector<double> next_log_probs(const std::vector<int>& prefix) override {
    auto lp = random_log_dist(prefix_key(seed_ ^ 0xabcdefULL, 0, prefix), V_, 1.0);
    lp[0] = kLogZero;
    return lp;
  }
  int end_id() const override { return end_; }

 private:
  std::uint64_t seed_;
  std::size_t V_;
  int end_;
};

/// Attention decoder over V ids (0 ends, V-1 is the never-emitted start) with
/// random CTC posteriors over T frames.
class HashAttentionScorer : public AttentionScorer {
 public:
  HashAttentionScorer(std::uint64_t seed, std::size_t T, std::size_t V) : seed_(seed), V_(V) {
    for (std::size_t t = 0; t < T; ++t) {
      auto row = random_log_dist(mix(seed ^ 0x5555ULL, t), V, 1.5);
      ctc_.insert(ctc_.end(), row.begin(), row.end());
    }
  }
  std::size_t vocab_size() const override { return V_; }
  std::vector<double> next_log_probs(const std::vector<int>& prefix) override {
    auto lp = random_log_dist(prefix_key(seed_, 0, prefix), V_, 1.5);
    lp[V_ - 1] = kLogZero;
    return lp;
  }
  const std::vector<double>& ctc_log_probs() const override { return ctc_; }

 private:
  std::uint64_t seed_;
  std::size_t V_;
  std::vector<double> ctc_;
};

// log P(y) for every label sequence y reachable with at most `max_sym`
// emissions per frame, by enumerating every alignment path. The reserved
// label is never emitted.
inline std::map<std::vector<int>, double> enumerate_sequences(TransducerScorer& m, std::size_t max_sym) {
  std::map<std::vector<int>, double> out;
  std::function<void(std::size_t, std::vector<int>&, std::size_t, double)> rec =
      [&](std::size_t t, std::vector<int>& y, std::size_t emitted, double s) {
        if (t == m.frames()) {
          auto it = out.find(y);
          out[y] = it == out.end() ? s : log_add(it->second, s);
          return;
        }
        const auto lp = m.score(t, y);
        rec(t + 1, y, 0, s + lp[0]);
        if (emitted == max_sym) return;
        for (std::size_t k = 1; k < m.vocab_size(); ++k) {
          if (static_cast<int>(k) == m.reserved_id()) continue;
          y.push_back(static_cast<int>(k));
          rec(t, y, emitted + 1, s + lp[k]);
          y.pop_back();
        }
      };
  std::vector<int> y;
  rec(0, y, 0, 0.0);
  return out;
}

}  // namespace trnk::testing

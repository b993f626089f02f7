// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trnk {

class ScoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScoreUnit { word, character };
ScoreUnit parse_score_unit(std::string_view s);

/// Lower-cased tokens; words split on whitespace, characters skip whitespace.
std::vector<std::string> tokenize(std::string_view text, ScoreUnit unit);

enum class EditOp { match, substitution, insertion, deletion };

struct AlignStep {
  EditOp op;
  std::string ref;  // empty for insertions
  std::string hyp;  // empty for deletions
};

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_tokens = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  /// Percent.
  double error_rate() const;
  EditCounts& operator+=(const EditCounts& o);
};

struct UtteranceScore {
  std::string id;
  EditCounts counts;
  std::vector<AlignStep> alignment;
};

/// Unit-cost Levenshtein alignment. Among the cheapest alignments the one
/// with the most substitutions wins, which fixes S, D and I; remaining path
/// ties prefer substitution, then insertion, then deletion.
UtteranceScore edit_align(std::span<const std::string> ref, std::span<const std::string> hyp);

struct ScoreReport {
  ScoreUnit unit = ScoreUnit::word;
  EditCounts totals;
  std::vector<UtteranceScore> utterances;  // sorted by id

  double error_rate() const { return totals.error_rate(); }
};

/// A missing hypothesis scores as all deletions; a hypothesis id without a
/// reference is an error.
ScoreReport score_corpus(const std::map<std::string, std::string>& refs,
                         const std::map<std::string, std::string>& hyps, ScoreUnit unit);

/// Per-utterance REF/HYP/EVAL blocks followed by the totals line.
void write_alignment_report(std::ostream& os, const ScoreReport& report);

struct SummaryRow {
  std::string model;
  double error_rate = 0.0;
};
void write_summary_table(std::ostream& os, std::span<const SummaryRow> rows, ScoreUnit unit);
void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows, ScoreUnit unit);

struct DecodeCost {
  std::size_t joiner_calls = 0;
  std::chrono::duration<double> wall_time{0.0};
  std::size_t utterances = 0;
};

/// Runs `decode_one(i)` for i in [0, n); each call returns its joiner-call count.
DecodeCost measure_decode(std::size_t n, const std::function<std::size_t(std::size_t)>& decode_one);

}  // namespace trnk

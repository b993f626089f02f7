// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/eval.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>

namespace trnk {

ScoreUnit parse_score_unit(std::string_view s) {
  if (s == "word" || s == "wer") return ScoreUnit::word;
  if (s == "char" || s == "character" || s == "cer") return ScoreUnit::character;
  throw ScoreError("unknown scoring unit '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view text, ScoreUnit unit) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    const char lower = static_cast<char>(std::tolower(c));
    if (unit == ScoreUnit::character) {
      out.emplace_back(1, lower);
    } else {
      cur.push_back(lower);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double EditCounts::error_rate() const {
  if (ref_tokens == 0) throw ScoreError("error rate of an empty reference");
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_tokens);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_tokens += o.ref_tokens;
  return *this;
}

UtteranceScore edit_align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  if (ref.empty()) throw ScoreError("empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  // Cells hold (edits, insertions + deletions); the lexicographic minimum is
  // the cheapest alignment with the most substitutions.
  using Cost = std::pair<std::size_t, std::size_t>;
  std::vector<Cost> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> Cost& { return d[i * (m + 1) + j]; };
  auto diag = [&](std::size_t i, std::size_t j) {
    const std::size_t sub = ref[i - 1] == hyp[j - 1] ? 0 : 1;
    return Cost{at(i - 1, j - 1).first + sub, at(i - 1, j - 1).second};
  };
  auto gap = [](const Cost& c) { return Cost{c.first + 1, c.second + 1}; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = {i, i};
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = {j, j};
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) at(i, j) = std::min({diag(i, j), gap(at(i, j - 1)), gap(at(i - 1, j))});
  }

  UtteranceScore s;
  s.counts.ref_tokens = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == diag(i, j)) {
      const bool same = ref[i - 1] == hyp[j - 1];
      s.alignment.push_back({same ? EditOp::match : EditOp::substitution, ref[i - 1], hyp[j - 1]});
      if (!same) ++s.counts.substitutions;
      --i;
      --j;
    } else if (j > 0 && at(i, j) == gap(at(i, j - 1))) {
      s.alignment.push_back({EditOp::insertion, "", hyp[j - 1]});
      ++s.counts.insertions;
      --j;
    } else {
      s.alignment.push_back({EditOp::deletion, ref[i - 1], ""});
      ++s.counts.deletions;
      --i;
    }
  }
  std::reverse(s.alignment.begin(), s.alignment.end());
  return s;
}

ScoreReport score_corpus(const std::map<std::string, std::string>& refs,
                         const std::map<std::string, std::string>& hyps, ScoreUnit unit) {
  if (refs.empty()) throw ScoreError("no reference utterances");
  for (const auto& [id, _] : hyps) {
    if (!refs.count(id)) throw ScoreError("hypothesis '" + id + "' has no reference");
  }
  ScoreReport report;
  report.unit = unit;
  for (const auto& [id, ref_text] : refs) {
    const auto ref = tokenize(ref_text, unit);
    if (ref.empty()) throw ScoreError("reference '" + id + "' is empty");
    auto it = hyps.find(id);
    const auto hyp = it == hyps.end() ? std::vector<std::string>{} : tokenize(it->second, unit);
    auto s = edit_align(ref, hyp);
    s.id = id;
    report.totals += s.counts;
    report.utterances.push_back(std::move(s));
  }
  return report;
}

namespace {

const char* unit_label(ScoreUnit u) { return u == ScoreUnit::word ? "WER" : "CER"; }

std::string percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

void write_alignment_report(std::ostream& os, const ScoreReport& report) {
  for (const auto& u : report.utterances) {
    std::string r = "REF: ", h = "HYP: ", e = "EVAL:";
    for (const auto& step : u.alignment) {
      const std::size_t w = std::max<std::size_t>({step.ref.size(), step.hyp.size(), 1});
      auto pad = [w](const std::string& s, char fill) { return " " + s + std::string(w - s.size(), fill); };
      r += pad(step.ref.empty() ? std::string(w, '*') : step.ref, ' ');
      h += pad(step.hyp.empty() ? std::string(w, '*') : step.hyp, ' ');
      const char* tag = step.op == EditOp::match          ? ""
                        : step.op == EditOp::substitution ? "S"
                        : step.op == EditOp::insertion    ? "I"
                                                          : "D";
      e += pad(tag, ' ');
    }
    os << "id: " << u.id << '\n' << r << '\n' << h << '\n' << e << '\n';
    os << "S=" << u.counts.substitutions << " D=" << u.counts.deletions << " I=" << u.counts.insertions
       << " N=" << u.counts.ref_tokens << "\n\n";
  }
  const auto& t = report.totals;
  os << unit_label(report.unit) << ' ' << percent(t.error_rate()) << "% [ " << t.errors() << " / " << t.ref_tokens
     << ", " << t.insertions << " ins, " << t.deletions << " del, " << t.substitutions << " sub ]\n";
}

void write_summary_table(std::ostream& os, std::span<const SummaryRow> rows, ScoreUnit unit) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  os << std::left << std::setw(static_cast<int>(w)) << "Model" << "  " << unit_label(unit) << "%\n";
  os << std::string(w, '-') << "  " << std::string(6, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(w)) << r.model << "  " << percent(r.error_rate) << '\n';
  }
}

void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows, ScoreUnit unit) {
  os << "model," << (unit == ScoreUnit::word ? "wer" : "cer") << '\n';
  for (const auto& r : rows) {
    std::string model = r.model;
    if (model.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : model) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      model = q + "\"";
    }
    os << model << ',' << percent(r.error_rate) << '\n';
  }
}

DecodeCost measure_decode(std::size_t n, const std::function<std::size_t(std::size_t)>& decode_one) {
  DecodeCost cost;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    cost.joiner_calls += decode_one(i);
    ++cost.utterances;
  }
  cost.wall_time = std::chrono::steady_clock::now() - start;
  return cost;
}

}  // namespace trnk

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace trnk {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> units) {
  entries_.reserve(units.size() + 2);
  entries_.emplace_back(kBlank);
  for (auto& u : units) {
    if (u.empty() || u == kBlank || u == kStart) throw DataError("invalid vocabulary unit '" + u + "'");
    entries_.push_back(std::move(u));
  }
  entries_.emplace_back(kStart);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary unit '" + entries_[i] + "'");
    }
  }
}

const std::string& Vocabulary::unit(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) throw DataError("label id out of range");
  return entries_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& unit) const {
  auto it = index_.find(unit);
  if (it == index_.end()) throw DataError("unit '" + unit + "' is not in the vocabulary");
  return it->second;
}

std::vector<std::string> split_units(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::string t = trim(text);
  while (i < t.size()) {
    const char c = t[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      while (i < t.size() && std::isspace(static_cast<unsigned char>(t[i]))) ++i;
      out.emplace_back(Vocabulary::kSpace);
    } else if (c == '[') {
      const std::size_t close = t.find(']', i);
      if (close == std::string::npos) throw DataError("unterminated tag in transcript: " + t);
      std::string tag = t.substr(i, close - i + 1);
      std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char ch) { return std::tolower(ch); });
      out.push_back(std::move(tag));
      i = close + 1;
    } else {
      out.emplace_back(1, static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      ++i;
    }
  }
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& u : split_units(text)) ids.push_back(id(u));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i == blank_id() || i == start_id()) continue;
    const std::string& u = unit(i);
    out += (u == kSpace) ? std::string(" ") : u;
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& e : entries_) out += e + "\n";
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 2 || lines.front() != kBlank || lines.back() != kStart) {
    throw DataError("vocabulary must start with " + std::string(kBlank) + " and end with " + std::string(kStart));
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + 1, lines.end() - 1));
}

void Vocabulary::save(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << serialize();
}

Vocabulary Vocabulary::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read vocabulary " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

std::vector<std::string> default_aux_units() {
  return {std::string(Vocabulary::kSpace), "'", "-", ".", "[noise]", "[laughs]", "[inaudible]"};
}

Vocabulary build_vocabulary(std::span<const std::string> texts, std::span<const std::string> aux_units) {
  if (texts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  const std::set<std::string> aux(aux_units.begin(), aux_units.end());
  std::set<std::string> observed;
  for (const auto& t : texts) {
    for (auto& u : split_units(t)) {
      if (!aux.count(u)) observed.insert(std::move(u));
    }
  }
  std::vector<std::string> units(observed.begin(), observed.end());
  units.insert(units.end(), aux_units.begin(), aux_units.end());
  return Vocabulary(std::move(units));
}

// ---------------------------------------------------------------------------
// Data directories

std::map<std::string, std::string> read_id_map(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::map<std::string, std::string> m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t sep = t.find_first_of(" \t");
    const std::string id = t.substr(0, sep);
    const std::string value = sep == std::string::npos ? std::string() : trim(t.substr(sep));
    if (!m.emplace(id, value).second) {
      throw DataError(path.filename().string() + ":" + std::to_string(lineno) + ": duplicate id '" + id + "'");
    }
  }
  return m;
}

void write_id_map(const fs::path& path, const std::map<std::string, std::string>& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& [id, value] : m) os << id << ' ' << value << '\n';
}

DataDir load_data_dir(const fs::path& path) {
  if (!fs::is_directory(path)) throw DataError("not a data directory: " + path.string());
  DataDir d;
  d.root = path;
  d.text = read_id_map(path / "text");
  for (const auto& [id, p] : read_id_map(path / "wav.scp")) {
    if (p.empty()) throw DataError("wav.scp: no audio path for '" + id + "'");
    fs::path audio = p;
    if (audio.is_relative()) audio = path / audio;
    d.wav.emplace(id, audio);
  }
  for (const auto& [id, _] : d.text) {
    if (!d.wav.count(id)) throw DataError("utterance '" + id + "' has a transcript but no wav.scp entry");
  }
  for (const auto& [id, audio] : d.wav) {
    if (!d.text.count(id)) throw DataError("utterance '" + id + "' has audio but no transcript");
    std::ifstream probe(audio, std::ios::binary);
    if (!probe) throw DataError("utterance '" + id + "': cannot read audio " + audio.string());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Feature corpora

void save_feature_corpus(const fs::path& dir, std::span<const Utterance> utts) {
  fs::create_directories(dir / "feats");
  std::map<std::string, std::string> scp, text;
  for (const auto& u : utts) {
    const std::string rel = "feats/" + u.id + ".feat";
    write_feat(dir / rel, u.features);
    scp[u.id] = rel;
    text[u.id] = u.text;
  }
  write_id_map(dir / "feats.scp", scp);
  write_id_map(dir / "text", text);
}

std::vector<Utterance> load_feature_corpus(const fs::path& dir) {
  const auto scp = read_id_map(dir / "feats.scp");
  const auto text = read_id_map(dir / "text");
  std::vector<Utterance> out;
  for (const auto& [id, rel] : scp) {
    auto it = text.find(id);
    if (it == text.end()) throw DataError("utterance '" + id + "' has features but no transcript");
    fs::path p = rel;
    if (p.is_relative()) p = dir / p;
    out.push_back({id, read_feat(p), it->second});
  }
  for (const auto& [id, _] : text) {
    if (!scp.count(id)) throw DataError("utterance '" + id + "' has a transcript but no features");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::validate() const {
  if (alphabet.size() < 2) throw std::invalid_argument("synthetic alphabet needs at least two characters");
  if (min_length == 0 || max_length < min_length) throw std::invalid_argument("bad synthetic length range");
  if (min_frames_per_char == 0 || max_frames_per_char < min_frames_per_char) {
    throw std::invalid_argument("bad synthetic frames-per-character range");
  }
  if (feature_dim == 0) throw std::invalid_argument("synthetic feature dimension must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synthetic noise level must be non-negative");
  for (char c : alphabet) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '[') {
      throw std::invalid_argument("synthetic alphabet must be plain single-character units");
    }
  }
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  auto to_float = [](double v) { return static_cast<double>(static_cast<float>(v)); };

  SyntheticCorpus corpus;
  Rng template_rng(spec.template_seed);
  for (char c : spec.alphabet) {
    std::vector<double> t(spec.feature_dim);
    for (double& v : t) v = template_rng.normal();
    corpus.templates[c] = std::move(t);
  }

  Rng rng(spec.sample_seed);
  const auto n_chars = static_cast<std::int64_t>(spec.alphabet.size());
  const int width = static_cast<int>(std::to_string(spec.num_utterances).size());
  for (std::size_t i = 0; i < spec.num_utterances; ++i) {
    const auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.min_length), static_cast<std::int64_t>(spec.max_length)));
    std::string text;
    while (text.size() < len) {
      const char c = spec.alphabet[static_cast<std::size_t>(rng.uniform_int(0, n_chars - 1))];
      if (!text.empty() && text.back() == c) continue;
      text.push_back(c);
    }
    std::vector<std::size_t> durations(len);
    std::size_t frames = 0;
    for (auto& d : durations) {
      d = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.min_frames_per_char),
                                                   static_cast<std::int64_t>(spec.max_frames_per_char)));
      frames += d;
    }
    FeatureMatrix f(frames, spec.feature_dim, FeatureKind::generic);
    std::size_t t = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const auto& tmpl = corpus.templates.at(text[k]);
      for (std::size_t r = 0; r < durations[k]; ++r, ++t) {
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
          const double noise = spec.noise_sigma > 0.0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
          f.at(t, d) = to_float(tmpl[d] + noise);
        }
      }
    }
    std::string id = std::to_string(i);
    id = spec.id_prefix + "_" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    corpus.utterances.push_back({std::move(id), std::move(f), std::move(text)});
  }
  return corpus;
}

}  // namespace trnk

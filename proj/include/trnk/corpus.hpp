// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Kaldi-style data directories, the character vocabulary and the synthetic
// corpus generator that stands in for real recordings.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trnk/frontend.hpp"

namespace trnk {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index 0 is blank, then the acoustic units, then the start symbol.
class Vocabulary {
 public:
  static constexpr std::string_view kBlank = "<blank>";
  static constexpr std::string_view kStart = "<s>";
  static constexpr std::string_view kSpace = "<space>";

  Vocabulary() = default;
  /// `units` excludes blank and start; order is preserved.
  explicit Vocabulary(std::vector<std::string> units);

  std::size_t size() const { return entries_.size(); }
  std::size_t num_units() const { return entries_.size() - 2; }
  int blank_id() const { return 0; }
  int start_id() const { return static_cast<int>(entries_.size()) - 1; }
  const std::vector<std::string>& entries() const { return entries_; }
  const std::string& unit(int id) const;
  /// Throws DataError for unknown units.
  int id(const std::string& unit) const;
  bool contains(const std::string& unit) const { return index_.count(unit) != 0; }

  /// Lower-cases, maps whitespace runs to <space> and bracketed tags to one unit.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);

  bool operator==(const Vocabulary& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Splits text into unit strings (see Vocabulary::encode).
std::vector<std::string> split_units(std::string_view text);

/// Space, apostrophe, hyphen, period and three collapsed noise tags.
std::vector<std::string> default_aux_units();
/// Observed units not listed in `aux_units` (sorted), then `aux_units` in order.
Vocabulary build_vocabulary(std::span<const std::string> texts, std::span<const std::string> aux_units);

struct DataDir {
  std::filesystem::path root;
  std::map<std::string, std::filesystem::path> wav;  // id -> audio path
  std::map<std::string, std::string> text;          // id -> transcript
};

/// Reads wav.scp and text; relative audio paths resolve against the directory.
DataDir load_data_dir(const std::filesystem::path& path);

// Feature corpora ------------------------------------------------------------

struct Utterance {
  std::string id;
  FeatureMatrix features;
  std::string text;
};

/// feats.scp ("id relative/path.feat"), per-utterance FEAT files and text.
void save_feature_corpus(const std::filesystem::path& dir, std::span<const Utterance> utts);
std::vector<Utterance> load_feature_corpus(const std::filesystem::path& dir);

/// Reads "id payload" lines; duplicate ids are an error.
std::map<std::string, std::string> read_id_map(const std::filesystem::path& path);
void write_id_map(const std::filesystem::path& path, const std::map<std::string, std::string>& m);

// Synthetic corpus -----------------------------------------------------------

struct SyntheticSpec {
  std::string alphabet = "abcdefghij";
  std::size_t num_utterances = 100;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::size_t min_frames_per_char = 3;
  std::size_t max_frames_per_char = 8;
  std::size_t feature_dim = 16;
  std::uint64_t template_seed = 1;
  std::uint64_t sample_seed = 2;
  double noise_sigma = 0.5;
  std::string id_prefix = "synth";

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Utterance> utterances;
  std::map<char, std::vector<double>> templates;
};

/// Each character owns a fixed random template (from template_seed); an
/// utterance repeats each character's template for a random number of frames
/// and adds Gaussian noise. Adjacent characters always differ so every label
/// boundary is visible in the features. Values are float-representable so FEAT
/// round-trips are exact.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

}  // namespace trnk

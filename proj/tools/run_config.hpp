// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Resolved key=value settings for one command. Defaults are registered up
// front; anything else is rejected. Later sources override earlier ones.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trnk::cli {

/// Bad flags, unknown keys, missing required settings. Exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

class RunConfig {
 public:
  explicit RunConfig(const KeyValues& defaults);

  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& overrides);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  /// Like str() but an empty value is a UsageError.
  const std::string& required(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;
  std::size_t jobs() const;
  /// Entries whose key starts with `prefix`, prefix kept.
  std::map<std::string, std::string> with_prefix(const std::string& prefix) const;

  /// "key = value" lines in key order; parses back to the same settings.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Reads a key=value file; unreadable files and syntax errors are UsageErrors.
KeyValues read_config_file(const std::filesystem::path& path);
/// Splits "key=value".
std::pair<std::string, std::string> split_assignment(const std::string& s);

}  // namespace trnk::cli

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "trnk/keyvalue.hpp"

namespace trnk::cli {

RunConfig::RunConfig(const KeyValues& defaults) {
  for (const auto& [k, v] : defaults) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::apply(const KeyValues& overrides) {
  for (const auto& [k, v] : overrides) set(k, v);
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("config key '" + key + "' was never registered");
  return it->second;
}

const std::string& RunConfig::required(const std::string& key) const {
  const std::string& v = str(key);
  if (v.empty()) throw UsageError("'" + key + "' is required");
  return v;
}

std::size_t RunConfig::size(const std::string& key) const {
  try {
    return parse_size(key, str(key));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

double RunConfig::real(const std::string& key) const {
  try {
    return parse_real(key, str(key));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

bool RunConfig::flag(const std::string& key) const {
  try {
    return parse_bool(key, str(key));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::uint64_t RunConfig::seed() const { return size("seed"); }

std::size_t RunConfig::jobs() const {
  const std::size_t j = size("jobs");
  if (j == 0) throw UsageError("jobs must be at least 1");
  return j;
}

std::map<std::string, std::string> RunConfig::with_prefix(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : values_) {
    if (k.compare(0, prefix.size(), prefix) == 0) out.emplace(k, v);
  }
  return out;
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    const auto kv = parse_key_values(ss.str());
    return {kv.begin(), kv.end()};
  } catch (const std::invalid_argument& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

}  // namespace trnk::cli

// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Value parsing for key=value configuration. Errors name the key.

#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace trnk {

std::size_t parse_size(const std::string& key, const std::string& v);
double parse_real(const std::string& key, const std::string& v);
/// Accepts true/false, 1/0, yes/no.
bool parse_bool(const std::string& key, const std::string& v);
/// Round-trips exactly.
std::string format_real(double v);

/// "key = value" lines; '#' starts a comment, blank lines are skipped.
/// Malformed lines and repeated keys throw std::invalid_argument.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace trnk

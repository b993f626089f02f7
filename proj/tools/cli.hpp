// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace trnk::cli {

/// Parses and runs one command line. Returns the process exit status:
/// 0 success, 1 task failure, 2 usage or I/O error.
int run(int argc, const char* const* argv);

}  // namespace trnk::cli
